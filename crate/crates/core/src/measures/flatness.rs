//! PAC-Bayes, worst-case sharpness and magnitude-aware bounds built from
//! the perturbation scales found by the searches.

use crate::model::Network;

use super::search::SigmaSearchResult;
use super::{MeasureConfig, MeasureId, Measured, REASON_SEARCH};

/// Parameter statistics shared by every flatness bound.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatnessInputs {
    pub w: Vec<f64>,
    pub w0: Vec<f64>,
    /// `‖w − w⁰‖²`
    pub dist_sq: f64,
    /// `‖w‖²`
    pub norm_sq: f64,
    pub m: usize,
    pub delta: f64,
    pub epsilon: f64,
}

impl FlatnessInputs {
    pub fn new(net: &Network, init: &Network, m: usize, config: &MeasureConfig) -> Self {
        let w: Vec<f64> = net.param_vecc().iter().map(|&v| v as f64).collect();
        let w0: Vec<f64> = init.param_vecc().iter().map(|&v| v as f64).collect();
        Self::from_vectors(w, w0, m, config.delta, config.epsilon_mag)
    }

    pub fn from_vectors(w: Vec<f64>, w0: Vec<f64>, m: usize, delta: f64, epsilon: f64) -> Self {
        assert_eq!(w.len(), w0.len(), "parameter vectors differ in length");
        let dist_sq = w.iter().zip(&w0).map(|(a, b)| (a - b).powi(2)).sum();
        let norm_sq = w.iter().map(|a| a * a).sum();
        FlatnessInputs {
            w,
            w0,
            dist_sq,
            norm_sq,
            m,
            delta,
            epsilon,
        }
    }

    pub fn omega(&self) -> f64 {
        self.w.len() as f64
    }

    /// `ln(m/δ) + 10`
    fn confidence(&self) -> f64 {
        (self.m as f64 / self.delta).ln() + 10.0
    }
}

fn searched_scale(res: &SigmaSearchResult) -> Option<f64> {
    (res.converged && res.sigma > 0.0 && res.sigma.is_finite()).then_some(res.sigma)
}

fn all_undefined(ids: &[MeasureId]) -> Vec<(MeasureId, Measured)> {
    ids.iter()
        .map(|&id| (id, Measured::undefined(REASON_SEARCH)))
        .collect()
}

/// `pacbayes_init`, `pacbayes_orig` and `1/σ²`.
pub fn pacbayes_measures(
    inputs: &FlatnessInputs,
    res: &SigmaSearchResult,
) -> Vec<(MeasureId, Measured)> {
    let ids = [
        MeasureId::PacBayesInit,
        MeasureId::PacBayesOrig,
        MeasureId::PacBayesFlatness,
    ];
    let Some(sigma) = searched_scale(res) else {
        return all_undefined(&ids);
    };
    let s2 = sigma * sigma;
    let c = inputs.confidence();
    vec![
        (ids[0], Measured::value(inputs.dist_sq / (4.0 * s2) + c)),
        (ids[1], Measured::value(inputs.norm_sq / (4.0 * s2) + c)),
        (ids[2], Measured::value(1.0 / s2)),
    ]
}

/// `sharpness_init`, `sharpness_orig` and `1/α²`.
pub fn sharpness_measures(
    inputs: &FlatnessInputs,
    res: &SigmaSearchResult,
) -> Vec<(MeasureId, Measured)> {
    let ids = [
        MeasureId::SharpnessInit,
        MeasureId::SharpnessOrig,
        MeasureId::SharpnessFlatness,
    ];
    let Some(alpha) = searched_scale(res) else {
        return all_undefined(&ids);
    };
    let a2 = alpha * alpha;
    let log_term = (2.0 * inputs.omega()).ln();
    let c = inputs.confidence();
    vec![
        (ids[0], Measured::value(inputs.dist_sq * log_term / (4.0 * a2) + c)),
        (ids[1], Measured::value(inputs.norm_sq * log_term / (4.0 * a2) + c)),
        (ids[2], Measured::value(1.0 / a2)),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MagnitudeKind {
    PacBayes,
    Sharpness,
}

/// `¼ Σᵢ ln((ε² + a·N/ω) / (ε² + s²|wᵢ − wᵢ⁰|²)) + ln(m/δ) + 10` where `N` is
/// `‖w − w⁰‖²` or `‖w‖²`, and `a` is `s² + 1` for the Gaussian posterior or
/// `s² + 4 ln(2ω/δ)` for the worst-case one.
pub fn magnitude_bound(inputs: &FlatnessInputs, scale: f64, kind: MagnitudeKind, numerator: f64) -> f64 {
    let s2 = scale * scale;
    let omega = inputs.omega();
    let e2 = inputs.epsilon * inputs.epsilon;
    let a = match kind {
        MagnitudeKind::PacBayes => s2 + 1.0,
        MagnitudeKind::Sharpness => s2 + 4.0 * (2.0 * omega / inputs.delta).ln(),
    };
    let top = (e2 + a * numerator / omega).ln();
    let sum: f64 = inputs
        .w
        .iter()
        .zip(&inputs.w0)
        .map(|(w, w0)| top - (e2 + s2 * (w - w0).powi(2)).ln())
        .sum();
    0.25 * sum + inputs.confidence()
}

/// The init and origin bounds plus the flatness `1/s²` for one magnitude
/// aware search.
pub fn magnitude_measures(
    inputs: &FlatnessInputs,
    res: &SigmaSearchResult,
    kind: MagnitudeKind,
) -> Vec<(MeasureId, Measured)> {
    let ids = match kind {
        MagnitudeKind::PacBayes => [
            MeasureId::PacBayesMagInit,
            MeasureId::PacBayesMagOrig,
            MeasureId::PacBayesMagFlatness,
        ],
        MagnitudeKind::Sharpness => [
            MeasureId::PacSharpnessMagInit,
            MeasureId::PacSharpnessMagOrig,
            MeasureId::SharpnessMagFlatness,
        ],
    };
    let Some(scale) = searched_scale(res) else {
        return all_undefined(&ids);
    };
    vec![
        (ids[0], Measured::value(magnitude_bound(inputs, scale, kind, inputs.dist_sq))),
        (ids[1], Measured::value(magnitude_bound(inputs, scale, kind, inputs.norm_sq))),
        (ids[2], Measured::value(1.0 / (scale * scale))),
    ]
}
