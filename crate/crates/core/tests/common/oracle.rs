//! Brute-force rank statistics used as oracles for the evaluation code.

use gencomplex::eval::GridKey;
use gencomplex::eval::grid_key;
use gencomplex::model::{Axis, HyperConfig, OptimizerKind};
use gencomplex::tensor::Rng;

pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn naive_tau(mu: &[f64], g: &[f64]) -> Option<f64> {
    let n = mu.len();
    if n < 2 {
        return None;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += sign(mu[i] - mu[j]) * sign(g[i] - g[j]);
            }
        }
    }
    Some(s / (n * (n - 1)) as f64)
}

pub fn config(levels: [usize; 7]) -> HyperConfig {
    HyperConfig {
        batch_size: [16, 32, 64][levels[0]],
        dropout: [0.0, 0.25, 0.5][levels[1]],
        learning_rate: [0.1, 0.032, 0.01][levels[2]],
        depth: levels[3] + 1,
        optimizer: [OptimizerKind::MomentumSgd, OptimizerKind::Adam, OptimizerKind::RmsProp][levels[4]],
        weight_decay: [0.0, 1e-4, 5e-4][levels[5]],
        width: [8, 16, 32][levels[6]],
    }
}

/// Distinct grid points drawn from a 3⁷ grid restricted to `axes`.
pub fn random_grid(n: usize, axes: &[usize], rng: &mut Rng) -> Vec<HyperConfig> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let cap: usize = 3usize.pow(axes.len() as u32);
    while out.len() < n.min(cap) {
        let mut levels = [0; 7];
        for &a in axes {
            levels[a] = rng.below(3);
        }
        if seen.insert(levels) {
            out.push(config(levels));
        }
    }
    out
}

pub fn naive_axis_psi(configs: &[HyperConfig], mu: &[f64], g: &[f64], axis: Axis) -> Option<f64> {
    let mut levels: Vec<f64> = configs.iter().map(|c| c.axis_value(axis)).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() < 2 {
        return None;
    }
    let others = |c: &HyperConfig| -> Vec<f64> {
        Axis::ALL
            .iter()
            .filter(|&&a| a != axis)
            .map(|&a| c.axis_value(a))
            .collect()
    };
    let mut slices: Vec<Vec<f64>> = Vec::new();
    for c in configs {
        let o = others(c);
        if !slices.contains(&o) {
            slices.push(o);
        }
    }
    let taus: Vec<f64> = slices
        .iter()
        .filter_map(|s| {
            let idx: Vec<usize> = (0..configs.len()).filter(|&i| &others(&configs[i]) == s).collect();
            let m: Vec<f64> = idx.iter().map(|&i| mu[i]).collect();
            let y: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
            naive_tau(&m, &y)
        })
        .collect();
    (!taus.is_empty()).then(|| taus.iter().sum::<f64>() / taus.len() as f64)
}

pub fn entropy(ps: &[f64]) -> f64 {
    -ps.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>()
}

/// `I = H(g|U) + H(μ|U) − H(μ,g|U)` with cells enumerated by linear search.
pub fn naive_cmi(configs: &[HyperConfig], mu: &[f64], g: &[f64], s: &[Axis]) -> (f64, f64, Option<f64>) {
    let mut cells: Vec<(Vec<f64>, [f64; 4])> = Vec::new();
    let mut total = 0.0;
    for a in 0..configs.len() {
        for b in 0..configs.len() {
            let (dm, dg) = (sign(mu[a] - mu[b]), sign(g[a] - g[b]));
            if a == b || dm == 0.0 || dg == 0.0 {
                continue;
            }
            let key: Vec<f64> = s
                .iter()
                .flat_map(|&ax| [configs[a].axis_value(ax), configs[b].axis_value(ax)])
                .collect();
            let slot = match (dm > 0.0, dg > 0.0) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            match cells.iter_mut().find(|(k, _)| *k == key) {
                Some((_, c)) => c[slot] += 1.0,
                None => {
                    let mut c = [0.0; 4];
                    c[slot] = 1.0;
                    cells.push((key, c));
                }
            }
            total += 1.0;
        }
    }
    let (mut h_g, mut h_mu, mut h_joint) = (0.0, 0.0, 0.0);
    for (_, c) in &cells {
        let n: f64 = c.iter().sum();
        let p = c.map(|v| v / n);
        let w = n / total;
        h_joint += w * entropy(&p);
        h_mu += w * entropy(&[p[0] + p[1], p[2] + p[3]]);
        h_g += w * entropy(&[p[0] + p[2], p[1] + p[3]]);
    }
    let mi = h_g + h_mu - h_joint;
    let norm = (total > 0.0 && h_g > 0.0).then(|| (mi / h_g).clamp(0.0, 1.0));
    (mi, h_g, norm)
}

pub fn keys(configs: &[HyperConfig]) -> Vec<GridKey> {
    configs.iter().map(grid_key).collect()
}

pub fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}
