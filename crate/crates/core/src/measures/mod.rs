//! The complexity-measure catalog and the orchestration that fills it in.

mod fisher;
mod flatness;
mod norms;
mod optimization;
mod output;
mod search;
mod spectral;
mod vc;

use std::time::Instant;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Rng;
use crate::train::ModelRecord;

pub use fisher::fisher_rao;
pub use flatness::{
    magnitude_bound, magnitude_measures, pacbayes_measures, sharpness_measures, FlatnessInputs, MagnitudeKind,
};
pub use norms::{
    frobenius_measures, layer_norms, path_norm, spectral_measures, LayerNorms,
};
pub use optimization::optimization_measures;
pub use output::{margin_and_output_measures, margins, percentile_nearest_rank, MarginStats, OutputMeasures};
pub use search::{
    estimate_accuracy, find_sigma, find_sigma_pacbayes, find_sigma_sharpness, reestimate_deviation,
    NetworkTarget, PerturbationTarget, SearchConfig, SearchKind, SigmaSearchResult,
};
pub use spectral::{
    conv_singular_values, conv_spectral_norm, power_iteration_norm, SpectralMethod,
};
pub use vc::{vc_measures, VcMeasures};

macro_rules! catalog {
    ($($variant:ident => $id:literal),* $(,)?) => {
        /// Identifier of one catalog measure.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum MeasureId {
            $($variant),*
        }

        impl MeasureId {
            /// Every measure, in report row order.
            pub const ALL: &'static [MeasureId] = &[$(MeasureId::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(MeasureId::$variant => $id),*
                }
            }

            pub fn parse(s: &str) -> Option<MeasureId> {
                match s {
                    $($id => Some(MeasureId::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

catalog! {
    VcDim => "vc_dim",
    NumParams => "num_params",
    CrossEntropy => "cross_entropy",
    InvMargin => "inv_margin",
    NegEntropy => "neg_entropy",
    SpecInit => "spec_init",
    SpecOrig => "spec_orig",
    SpecInitMain => "spec_init_main",
    SpecOrigMain => "spec_orig_main",
    ProdOfSpecOverMargin => "prod_of_spec_over_margin",
    ProdOfSpec => "prod_of_spec",
    FroOverSpec => "fro_over_spec",
    SumOfSpecOverMargin => "sum_of_spec_over_margin",
    SumOfSpec => "sum_of_spec",
    ProdOfFroOverMargin => "prod_of_fro_over_margin",
    ProdOfFro => "prod_of_fro",
    SumOfFroOverMargin => "sum_of_fro_over_margin",
    SumOfFro => "sum_of_fro",
    FrobDistance => "frob_distance",
    DistSpecInit => "dist_spec_init",
    ParamNorm => "param_norm",
    PathNormOverMargin => "path_norm_over_margin",
    PathNorm => "path_norm",
    FisherRao => "fisher_rao",
    PacBayesInit => "pacbayes_init",
    PacBayesOrig => "pacbayes_orig",
    SharpnessInit => "sharpness_init",
    SharpnessOrig => "sharpness_orig",
    PacBayesFlatness => "pacbayes_flatness",
    SharpnessFlatness => "sharpness_flatness",
    PacBayesMagInit => "pacbayes_mag_init",
    PacBayesMagOrig => "pacbayes_mag_orig",
    PacSharpnessMagInit => "pac_sharpness_mag_init",
    PacSharpnessMagOrig => "pac_sharpness_mag_orig",
    PacBayesMagFlatness => "pacbayes_mag_flatness",
    SharpnessMagFlatness => "sharpness_mag_flatness",
    StepsToLoss01 => "steps_to_0_1",
    StepsLoss01To001 => "steps_0_1_to_0_01",
    GradNoiseEpoch1 => "grad_noise_epoch1",
    GradNoiseFinal => "grad_noise_final",
}

impl std::fmt::Display for MeasureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const REASON_MARGIN: &str = "nonpositive-margin";
pub const REASON_SEARCH: &str = "sigma-search-failed";
pub const REASON_NOT_REACHED: &str = "loss-not-reached";
pub const REASON_NOT_CONVERGED: &str = "not-converged";

/// A measure value, or the reason it has none.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub defined: bool,
    pub reason: Option<String>,
}

impl Measured {
    pub fn value(v: f64) -> Self {
        if v.is_finite() {
            Measured {
                value: v,
                defined: true,
                reason: None,
            }
        } else {
            Measured::undefined("non-finite")
        }
    }

    pub fn undefined(reason: &str) -> Self {
        Measured {
            value: f64::NAN,
            defined: false,
            reason: Some(reason.to_string()),
        }
    }

    pub fn from_result(r: Result<f64, &str>) -> Self {
        match r {
            Ok(v) => Measured::value(v),
            Err(reason) => Measured::undefined(reason),
        }
    }

    pub fn get(&self) -> Option<f64> {
        self.defined.then_some(self.value)
    }
}

/// One model's value for every catalog measure.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureVector {
    entries: Vec<Measured>,
}

impl Default for MeasureVector {
    fn default() -> Self {
        MeasureVector {
            entries: vec![Measured::undefined("not-computed"); MeasureId::ALL.len()],
        }
    }
}

impl MeasureVector {
    pub fn set(&mut self, id: MeasureId, m: Measured) {
        self.entries[id as usize] = m;
    }

    pub fn get(&self, id: MeasureId) -> &Measured {
        &self.entries[id as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (MeasureId, &Measured)> {
        MeasureId::ALL.iter().copied().zip(&self.entries)
    }
}

/// How spectral norms of strided convs are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StridedSpectral {
    /// Power iteration on the zero-padded strided operator.
    PowerIteration,
    /// Exact values of the stride-1 circulant operator with the same kernel.
    Stride1Fft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    pub delta: f64,
    pub epsilon_mag: f64,
    pub target_deviation: f64,
    pub margin_percentile: f64,
    pub search: SearchConfig,
    pub strided_spectral: StridedSpectral,
    pub power_iterations: usize,
    pub power_tolerance: f64,
    /// Examples for the final gradient-noise estimate.
    pub noise_sample: usize,
    /// Examples for the Fisher-Rao sum; 0 means the whole training set.
    pub fisher_sample: usize,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            delta: 0.01,
            epsilon_mag: 1e-3,
            target_deviation: 0.1,
            margin_percentile: 10.0,
            search: SearchConfig::default(),
            strided_spectral: StridedSpectral::PowerIteration,
            power_iterations: 200,
            power_tolerance: 1e-3,
            noise_sample: 1000,
            fisher_sample: 0,
        }
    }
}

impl MeasureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        if !(self.target_deviation > 0.0 && self.target_deviation < 1.0) {
            return Err(Error::invalid("target deviation must lie in (0, 1)"));
        }
        if !(self.margin_percentile > 0.0 && self.margin_percentile <= 100.0) {
            return Err(Error::invalid("margin percentile must lie in (0, 100]"));
        }
        self.search.validate()
    }
}

/// Search outcomes and margin statistics behind a measure vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub margin: MarginStats,
    pub searches: Vec<(SearchKind, SigmaSearchResult)>,
}

fn timed<R>(name: &str, f: impl FnOnce() -> R) -> R {
    let t = Instant::now();
    let r = f();
    debug!("{name} took {:.3}s", t.elapsed().as_secs_f64());
    r
}

/// Every catalog measure for one trained model. Failures of individual
/// measures become undefined entries; only structural errors abort.
pub fn compute_all(
    record: &ModelRecord,
    train: &Dataset,
    config: &MeasureConfig,
    seed: u64,
) -> Result<(MeasureVector, Diagnostics)> {
    config.validate()?;
    let net = record.fused()?;
    let init = record.fused_init()?;
    let rng = Rng::new(seed);
    let mut mv = MeasureVector::default();

    let vc = vc_measures(&net, config.delta);
    mv.set(MeasureId::VcDim, Measured::value(vc.mu_vc));
    mv.set(MeasureId::NumParams, Measured::value(vc.mu_param));

    let out = timed("output measures", || {
        margin_and_output_measures(&net, train, config.margin_percentile)
    })?;
    mv.set(MeasureId::CrossEntropy, Measured::value(out.cross_entropy));
    mv.set(MeasureId::InvMargin, Measured::from_result(out.inv_margin_sq));
    mv.set(MeasureId::NegEntropy, Measured::value(out.neg_entropy));
    let gamma = out.margin.gamma;

    let norms = timed("layer norms", || layer_norms(&net, &init, config))?;
    let spec = spectral_measures(&norms, &net, gamma, out.margin.input_bound, train.len(), config.delta);
    let fro = frobenius_measures(&norms, gamma);
    for (id, m) in spec.into_iter().chain(fro) {
        mv.set(id, m);
    }
    let pn = path_norm(&net)?;
    mv.set(MeasureId::PathNorm, Measured::value(pn));
    mv.set(
        MeasureId::PathNormOverMargin,
        Measured::from_result(over_margin(pn, gamma)),
    );
    let fr = timed("fisher-rao", || {
        fisher_rao(&net, train, config.fisher_sample, &mut rng.fork(1))
    })?;
    mv.set(MeasureId::FisherRao, Measured::value(fr));

    let mut searches = Vec::new();
    let inputs = FlatnessInputs::new(&net, &init, train.len(), config);
    for (i, kind) in SearchKind::ALL.into_iter().enumerate() {
        let res = timed(kind.name(), || {
            let mut target = NetworkTarget::new(net.clone(), train, &config.search);
            find_sigma(&mut target, kind, config, &mut rng.fork(10 + i as u64))
        })?;
        let entries = match kind {
            SearchKind::Gaussian => pacbayes_measures(&inputs, &res),
            SearchKind::WorstCase => sharpness_measures(&inputs, &res),
            SearchKind::MagnitudeGaussian => {
                magnitude_measures(&inputs, &res, MagnitudeKind::PacBayes)
            }
            SearchKind::MagnitudeWorstCase => {
                magnitude_measures(&inputs, &res, MagnitudeKind::Sharpness)
            }
        };
        for (id, m) in entries {
            mv.set(id, m);
        }
        searches.push((kind, res));
    }

    let opt = timed("optimization measures", || {
        optimization_measures(&record.trace, &net, train, config.noise_sample, &mut rng.fork(2))
    })?;
    for (id, m) in opt {
        mv.set(id, m);
    }
    Ok((
        mv,
        Diagnostics {
            margin: out.margin,
            searches,
        },
    ))
}

/// `value / γ²`, undefined when `γ ≤ 0`.
pub(crate) fn over_margin(value: f64, gamma: f64) -> Result<f64, &'static str> {
    if gamma > 0.0 {
        Ok(value / (gamma * gamma))
    } else {
        Err(REASON_MARGIN)
    }
}
