//! Bisection searches for the largest perturbation scale whose accuracy
//! drop stays at the target deviation.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ForwardMode, Network};
use crate::tensor::{softmax_cross_entropy_batch, Rng};
use crate::train::{argmax, BatchStream};

use super::MeasureConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Bisection steps.
    pub m1: usize,
    /// Perturbation draws (or ascent restarts) per candidate.
    pub m2: usize,
    /// Ascent restarts per candidate for the worst-case searches, if not `m2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    /// Cap on Gaussian draws per candidate. When set, draws come in blocks of
    /// `m2` until the estimate is clearly inside or outside `target ± ε_d`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_draws: Option<usize>,
    /// Batches per accuracy estimate.
    pub m3: usize,
    pub batch_size: usize,
    /// Gradient-ascent steps per restart.
    pub m4: usize,
    pub ascent_rate: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub eps_deviation: f64,
    pub eps_sigma: f64,
    /// Start each ascent restart from uniform noise in `±σ/ω`.
    pub ascent_init_noise: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            m1: 20,
            m2: 15,
            restarts: None,
            max_draws: None,
            m3: 10,
            batch_size: 256,
            m4: 20,
            ascent_rate: 1e-3,
            sigma_min: 1e-5,
            sigma_max: 2.0,
            eps_deviation: 0.01,
            eps_sigma: 1e-4,
            ascent_init_noise: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m2 == 0 || self.restarts == Some(0) || self.m3 == 0 || self.batch_size == 0 {
            return Err(Error::invalid("search needs m2, m3 and batch size ≥ 1"));
        }
        if !(self.sigma_min >= 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::invalid("search bounds need 0 ≤ sigma_min < sigma_max"));
        }
        Ok(())
    }

    /// Draws or restarts per candidate for `kind`.
    pub fn draws(&self, kind: SearchKind) -> usize {
        if kind.worst_case() {
            self.restarts.unwrap_or(self.m2)
        } else {
            self.m2
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchKind {
    /// Isotropic Gaussian `N(0, σ²I)`.
    Gaussian,
    /// Projected gradient ascent inside the ℓ₂ ball of radius α.
    WorstCase,
    /// Per-coordinate Gaussian `N(0, σ'² wᵢ² + ε²)`.
    MagnitudeGaussian,
    /// Gradient ascent clipped to `|uᵢ| ≤ α'|wᵢ|`.
    MagnitudeWorstCase,
}

impl SearchKind {
    pub const ALL: [SearchKind; 4] = [
        SearchKind::Gaussian,
        SearchKind::WorstCase,
        SearchKind::MagnitudeGaussian,
        SearchKind::MagnitudeWorstCase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SearchKind::Gaussian => "sigma",
            SearchKind::WorstCase => "alpha",
            SearchKind::MagnitudeGaussian => "sigma_mag",
            SearchKind::MagnitudeWorstCase => "alpha_mag",
        }
    }

    fn worst_case(self) -> bool {
        matches!(self, SearchKind::WorstCase | SearchKind::MagnitudeWorstCase)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSearchResult {
    pub sigma: f64,
    pub achieved_deviation: f64,
    /// Monte Carlo standard error of `achieved_deviation`.
    pub stderr: f64,
    pub base_accuracy: f64,
    /// Draws (or restarts) behind `achieved_deviation`.
    #[serde(default)]
    pub draws: usize,
    pub iterations: usize,
    pub converged: bool,
    pub monotonicity_violations: usize,
    /// Every `(σ, deviation)` evaluated, in order.
    pub evaluations: Vec<(f64, f64)>,
}

/// What the searches perturb: a parameter vector with an accuracy estimate
/// and a loss gradient.
pub trait PerturbationTarget {
    fn base(&self) -> &[f64];
    fn accuracy(&mut self, params: &[f64], rng: &mut Rng) -> f64;
    fn loss_gradient(&mut self, params: &[f64], rng: &mut Rng) -> Vec<f64>;
}

/// Mean accuracy over `m3` batches drawn from a reshuffled permutation, so
/// batches tiling the set give the exact full-set accuracy.
pub fn estimate_accuracy(
    net: &Network,
    data: &Dataset,
    m3: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let stream_id = rng.next_u64();
    let mut stream = BatchStream::new(data.len(), rng.fork(stream_id));
    let bs = batch_size.min(data.len());
    let mut total = 0.0;
    for _ in 0..m3 {
        let idx = stream.next_full_batch(bs);
        let (x, y) = data.batch(&idx);
        let logits = net.predict(&x)?;
        if !logits.all_finite() {
            return Ok(0.0);
        }
        let k = net.num_classes;
        let correct = logits
            .data()
            .chunks(k)
            .zip(&y)
            .filter(|(row, &label)| {
                let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                argmax(&row) == label
            })
            .count();
        total += correct as f64 / bs as f64;
    }
    Ok(total / m3 as f64)
}

/// A fused network and its training set.
pub struct NetworkTarget<'a> {
    work: Network,
    base: Vec<f64>,
    data: &'a Dataset,
    m3: usize,
    batch_size: usize,
}

impl<'a> NetworkTarget<'a> {
    pub fn new(net: Network, data: &'a Dataset, config: &SearchConfig) -> Self {
        let base = net.param_vecc().iter().map(|&v| v as f64).collect();
        NetworkTarget {
            work: net,
            base,
            data,
            m3: config.m3,
            batch_size: config.batch_size,
        }
    }

    fn load(&mut self, params: &[f64]) {
        let p: Vec<f32> = params.iter().map(|&v| v as f32).collect();
        self.work.scatter(&p).expect("parameter count is fixed");
    }
}

impl PerturbationTarget for NetworkTarget<'_> {
    fn base(&self) -> &[f64] {
        &self.base
    }

    fn accuracy(&mut self, params: &[f64], rng: &mut Rng) -> f64 {
        self.load(params);
        estimate_accuracy(&self.work, self.data, self.m3, self.batch_size, rng).unwrap_or(0.0)
    }

    fn loss_gradient(&mut self, params: &[f64], rng: &mut Rng) -> Vec<f64> {
        self.load(params);
        let idx = rng.sample_indices(self.data.len(), self.batch_size);
        let (x, y) = self.data.batch(&idx);
        let grad = self
            .work
            .forward(&x, ForwardMode::Eval)
            .and_then(|(logits, tape)| {
                let ce = softmax_cross_entropy_batch(&logits, &y)?;
                self.work.backward(&tape, &ce.grad)
            });
        match grad {
            Ok(g) if g.iter().all(|v| v.is_finite()) => g.iter().map(|&v| v as f64).collect(),
            _ => vec![0.0; self.base.len()],
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One perturbed accuracy at scale `sigma`.
fn perturbed_accuracy<P: PerturbationTarget + ?Sized>(
    target: &mut P,
    kind: SearchKind,
    sigma: f64,
    config: &MeasureConfig,
    rng: &mut Rng,
) -> f64 {
    let w = target.base().to_vec();
    let omega = w.len() as f64;
    let s = &config.search;
    if !kind.worst_case() {
        let eps2 = config.epsilon_mag * config.epsilon_mag;
        let theta: Vec<f64> = w
            .iter()
            .map(|&wi| {
                let sd = match kind {
                    SearchKind::MagnitudeGaussian => (sigma * sigma * wi * wi + eps2).sqrt(),
                    _ => sigma,
                };
                wi + sd * rng.normal()
            })
            .collect();
        return target.accuracy(&theta, rng);
    }
    let half = sigma / omega;
    let mut u: Vec<f64> = if s.ascent_init_noise {
        (0..w.len()).map(|_| rng.uniform_in(-half, half)).collect()
    } else {
        vec![0.0; w.len()]
    };
    let project = |u: &mut [f64]| match kind {
        SearchKind::MagnitudeWorstCase => {
            for (ui, &wi) in u.iter_mut().zip(&w) {
                let r = sigma * wi.abs();
                *ui = ui.clamp(-r, r);
            }
        }
        _ => {
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > sigma {
                u.iter_mut().for_each(|v| *v *= sigma / norm);
            }
        }
    };
    project(&mut u);
    let mut theta: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a + b).collect();
    for _ in 0..s.m4 {
        let g = target.loss_gradient(&theta, rng);
        for (ui, gi) in u.iter_mut().zip(&g) {
            *ui += s.ascent_rate * gi;
        }
        project(&mut u);
        for ((t, &wi), &ui) in theta.iter_mut().zip(&w).zip(&u) {
            *t = wi + ui;
        }
    }
    target.accuracy(&theta, rng)
}

/// Deviation `|ℓ − ℓ̂|` at one scale with its standard error. Gaussian
/// kinds average `m2` draws; worst-case kinds take the minimum accuracy
/// over `m2` restarts.
fn deviation_at<P: PerturbationTarget + ?Sized>(
    target: &mut P,
    kind: SearchKind,
    sigma: f64,
    base_accuracy: f64,
    m2: usize,
    config: &MeasureConfig,
    rng: &mut Rng,
) -> (f64, f64) {
    let accs: Vec<f64> = (0..m2)
        .map(|_| perturbed_accuracy(target, kind, sigma, config, rng))
        .collect();
    if kind.worst_case() {
        let worst = accs.iter().copied().fold(f64::INFINITY, f64::min);
        ((base_accuracy - worst).abs(), 0.0)
    } else {
        let (mean, std) = mean_std(&accs);
        ((base_accuracy - mean).abs(), std / (m2 as f64).sqrt())
    }
}

/// Standard errors separating a sequential estimate from an edge of the band.
/// Each search takes many looks, so two is too permissive.
const DECISION_Z: f64 = 3.0;

/// A search candidate's deviation: `(deviation, stderr, draws)`. With
/// `max_draws` set, Gaussian kinds keep adding blocks of `m2` draws while
/// the `DECISION_Z` standard-error interval straddles an edge of `target ± ε_d`.
/// Worst-case kinds stop restarting once the deviation exceeds the band.
fn candidate_deviation<P: PerturbationTarget + ?Sized>(
    target: &mut P,
    kind: SearchKind,
    sigma: f64,
    base_accuracy: f64,
    config: &MeasureConfig,
    rng: &mut Rng,
) -> (f64, f64, usize) {
    let s = &config.search;
    let block = s.draws(kind);
    if kind.worst_case() {
        // the deviation only grows with more restarts, so once it is above
        // the band the bisection step is decided
        let ceiling = config.target_deviation + s.eps_deviation;
        let mut worst = f64::INFINITY;
        for n in 1..=block {
            worst = worst.min(perturbed_accuracy(target, kind, sigma, config, rng));
            if (base_accuracy - worst).abs() > ceiling {
                return ((base_accuracy - worst).abs(), 0.0, n);
            }
        }
        return ((base_accuracy - worst).abs(), 0.0, block);
    }
    let Some(cap) = s.max_draws.map(|c| c.max(block)) else {
        let (d, se) = deviation_at(target, kind, sigma, base_accuracy, block, config, rng);
        return (d, se, block);
    };
    let mut accs = Vec::with_capacity(cap);
    loop {
        let n = block.min(cap - accs.len());
        accs.extend((0..n).map(|_| perturbed_accuracy(target, kind, sigma, config, rng)));
        let (mean, std) = mean_std(&accs);
        let d = (base_accuracy - mean).abs();
        let se = std / (accs.len() as f64).sqrt();
        let off = (d - config.target_deviation).abs();
        if accs.len() >= cap || off >= s.eps_deviation + DECISION_Z * se || off + DECISION_Z * se <= s.eps_deviation {
            return (d, se, accs.len());
        }
    }
}

fn count_violations(evals: &[(f64, f64)], eps: f64) -> usize {
    let mut n = 0;
    for (i, &(sa, da)) in evals.iter().enumerate() {
        for &(sb, db) in &evals[i + 1..] {
            let (lo, hi) = if sa < sb { (da, db) } else { (db, da) };
            if sa != sb && lo > hi + eps {
                n += 1;
            }
        }
    }
    n
}

/// Bisection on `[σ_min, σ_max]` for the scale whose deviation is within
/// `ε_d` of the target; stops early once the bracket is narrower than `ε_σ`.
pub fn find_sigma<P: PerturbationTarget + ?Sized>(
    target: &mut P,
    kind: SearchKind,
    config: &MeasureConfig,
    rng: &mut Rng,
) -> Result<SigmaSearchResult> {
    config.validate()?;
    let s = &config.search;
    let w = target.base().to_vec();
    let base_accuracy = target.accuracy(&w, rng);
    let goal = config.target_deviation;
    let mut evals = Vec::new();
    let finish = |sigma, (dev, stderr, draws): (f64, f64, usize), iterations, converged, evals: Vec<(f64, f64)>| {
        Ok(SigmaSearchResult {
            sigma,
            achieved_deviation: dev,
            stderr,
            draws,
            base_accuracy,
            iterations,
            converged,
            monotonicity_violations: count_violations(&evals, s.eps_deviation),
            evaluations: evals,
        })
    };
    let at_max = candidate_deviation(target, kind, s.sigma_max, base_accuracy, config, rng);
    evals.push((s.sigma_max, at_max.0));
    if at_max.0 < goal - s.eps_deviation {
        return finish(s.sigma_max, at_max, 0, false, evals);
    }
    let (mut lo, mut hi) = (s.sigma_min, s.sigma_max);
    let mut last = (s.sigma_max, at_max);
    for it in 1..=s.m1 {
        let mid = 0.5 * (lo + hi);
        let est = candidate_deviation(target, kind, mid, base_accuracy, config, rng);
        let d = est.0;
        evals.push((mid, d));
        last = (mid, est);
        if (d - goal).abs() <= s.eps_deviation || hi - lo < s.eps_sigma {
            return finish(mid, est, it, true, evals);
        }
        if d > goal {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    finish(last.0, last.1, s.m1, false, evals)
}

pub fn find_sigma_pacbayes<P: PerturbationTarget + ?Sized>(
    target: &mut P,
    config: &MeasureConfig,
    rng: &mut Rng,
) -> Result<SigmaSearchResult> {
    find_sigma(target, SearchKind::Gaussian, config, rng)
}

pub fn find_sigma_sharpness<P: PerturbationTarget + ?Sized>(
    target: &mut P,
    config: &MeasureConfig,
    rng: &mut Rng,
) -> Result<SigmaSearchResult> {
    find_sigma(target, SearchKind::WorstCase, config, rng)
}

/// Re-estimate the deviation at `sigma` with `factor` times a budget of
/// `draws`: `factor · draws` Gaussian draws, or `factor` independent
/// worst-case estimates of `draws` restarts each. Returns `(deviation, standard error)`.
#[allow(clippy::too_many_arguments)]
pub fn reestimate_deviation<P: PerturbationTarget + ?Sized>(
    target: &mut P,
    kind: SearchKind,
    sigma: f64,
    base_accuracy: f64,
    draws: usize,
    factor: usize,
    config: &MeasureConfig,
    rng: &mut Rng,
) -> (f64, f64) {
    let m2 = draws.max(1);
    if kind.worst_case() {
        let devs: Vec<f64> = (0..factor)
            .map(|_| deviation_at(target, kind, sigma, base_accuracy, m2, config, rng).0)
            .collect();
        let (mean, std) = mean_std(&devs);
        (mean, std / (factor as f64).sqrt())
    } else {
        deviation_at(target, kind, sigma, base_accuracy, m2 * factor, config, rng)
    }
}
