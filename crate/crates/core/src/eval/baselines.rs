use std::collections::BTreeMap;

use crate::model::{Axis, HyperConfig};
use crate::tensor::Rng;

/// Gap corrupted by `N(0, ε²)` noise.
pub fn oracle_measure(gaps: &[f64], epsilon: f64, rng: &mut Rng) -> Vec<f64> {
    gaps.iter().map(|g| g + epsilon * rng.normal()).collect()
}

/// Monotone surrogate encoding the conventional belief about one axis:
/// larger batches and optimizers later in SGD < Adam < RMSProp raise the
/// gap, more of every other axis lowers it.
pub fn canonical_measure(axis: Axis, config: &HyperConfig) -> f64 {
    let v = config.axis_value(axis);
    match axis {
        Axis::BatchSize | Axis::Optimizer => v,
        _ => -v,
    }
}

pub fn random_measure(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform()).collect()
}

/// Orders depth groups by their mean gap and is uniformly random within a
/// group.
pub fn depth_oracle_measure(configs: &[HyperConfig], gaps: &[f64], rng: &mut Rng) -> Vec<f64> {
    let mut groups: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (c, g) in configs.iter().zip(gaps) {
        let e = groups.entry(c.depth).or_default();
        e.0 += g;
        e.1 += 1;
    }
    let mut means: Vec<(usize, f64)> = groups.iter().map(|(&d, &(s, n))| (d, s / n as f64)).collect();
    means.sort_by(|a, b| a.1.total_cmp(&b.1));
    let rank: BTreeMap<usize, f64> = means.iter().enumerate().map(|(r, &(d, _))| (d, r as f64)).collect();
    configs
        .iter()
        .map(|c| rank[&c.depth] + 0.5 * rng.uniform())
        .collect()
}
