use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{canonical_measure, depth_oracle_measure, oracle_measure, random_measure};
use super::cmi::{axis_entropies, cmi_summary, CmiSummary};
use super::rank::{axis_tau, granulated_kendall, grid_key, kendall_tau, AxisTau, GridKey};
use crate::error::{Error, Result};
use crate::measures::{MeasureId, MeasureVector};
use crate::model::{Axis, HyperConfig};
use crate::tensor::Rng;

/// One trained model as seen by the evaluation.
#[derive(Clone, Debug)]
pub struct EvalModel {
    pub config: HyperConfig,
    pub gap: f64,
    pub converged: bool,
    pub measures: MeasureVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub seed: u64,
    pub oracle_epsilons: Vec<f64>,
    pub cmi: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            seed: 0,
            oracle_epsilons: vec![0.02, 0.05],
            cmi: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    /// Models with a defined value.
    pub models: usize,
    pub tau: Option<f64>,
    pub axes: Vec<AxisTau>,
    pub psi: Option<f64>,
    pub cmi: Option<CmiSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub converged: usize,
    pub excluded: usize,
    /// Catalog measures in catalog order, then the baselines.
    pub rows: Vec<ReportRow>,
    /// ψ of each axis's canonical ordering on that axis alone.
    pub canonical: Vec<Option<f64>>,
    /// Entropy of the gap sign given each axis, in bits.
    pub conditional_entropy: Vec<f64>,
}

impl EvalReport {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// τ, ψ, Ψ and optionally CMI of one measure over the given models.
pub fn evaluate_measure(name: &str, keys: &[GridKey], mu: &[f64], g: &[f64], cmi: bool) -> ReportRow {
    let keep: Vec<usize> = (0..mu.len()).filter(|&i| !mu[i].is_nan()).collect();
    let k: Vec<GridKey> = keep.iter().map(|&i| keys[i]).collect();
    let m: Vec<f64> = keep.iter().map(|&i| mu[i]).collect();
    let y: Vec<f64> = keep.iter().map(|&i| g[i]).collect();
    let gran = granulated_kendall(&k, &m, &y);
    ReportRow {
        name: name.to_string(),
        models: keep.len(),
        tau: kendall_tau(&m, &y),
        axes: gran.axes,
        psi: gran.psi,
        cmi: (cmi && keep.len() >= 2).then(|| cmi_summary(&k, &m, &y)),
    }
}

pub fn build_report(models: &[EvalModel], options: &ReportOptions) -> Result<EvalReport> {
    let used: Vec<&EvalModel> = models.iter().filter(|m| m.converged).collect();
    if used.len() < 2 {
        return Err(Error::InsufficientModels {
            needed: 2,
            found: used.len(),
        });
    }
    let keys: Vec<GridKey> = used.iter().map(|m| grid_key(&m.config)).collect();
    let gaps: Vec<f64> = used.iter().map(|m| m.gap).collect();
    let configs: Vec<HyperConfig> = used.iter().map(|m| m.config.clone()).collect();

    let mut series: Vec<(String, Vec<f64>)> = MeasureId::ALL
        .iter()
        .map(|&id| {
            let v = used
                .iter()
                .map(|m| m.measures.get(id).get().unwrap_or(f64::NAN))
                .collect();
            (id.as_str().to_string(), v)
        })
        .collect();
    let root = Rng::new(options.seed);
    for (i, &eps) in options.oracle_epsilons.iter().enumerate() {
        let mut rng = root.fork(i as u64);
        series.push((format!("oracle-{eps}"), oracle_measure(&gaps, eps, &mut rng)));
    }
    series.push(("random".into(), random_measure(gaps.len(), &mut root.fork(100))));
    series.push((
        "depth-oracle".into(),
        depth_oracle_measure(&configs, &gaps, &mut root.fork(101)),
    ));

    let rows: Vec<ReportRow> = series
        .par_iter()
        .map(|(name, mu)| evaluate_measure(name, &keys, mu, &gaps, options.cmi))
        .collect();

    let canonical = Axis::ALL
        .iter()
        .map(|&a| {
            let mu: Vec<f64> = configs.iter().map(|c| canonical_measure(a, c)).collect();
            axis_tau(&keys, &mu, &gaps, a).psi
        })
        .collect();

    Ok(EvalReport {
        converged: used.len(),
        excluded: models.len() - used.len(),
        rows,
        canonical,
        conditional_entropy: axis_entropies(&keys, &gaps),
    })
}
