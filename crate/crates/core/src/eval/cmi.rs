use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rank::GridKey;
use crate::model::Axis;

/// Counts of `(sign Δμ, sign Δg)` over ordered model pairs, one 2×2 table
/// per conditioning cell. Index 0 is `+1`, index 1 is `−1`; the first index
/// is the measure.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CmiTable {
    pub cells: BTreeMap<Vec<(u64, u64)>, [[u64; 2]; 2]>,
}

impl CmiTable {
    /// Cells are keyed by the ordered value pair `(θᵃ, θᵇ)` of every axis in
    /// `s`. Pairs with a tie in either variable are dropped.
    pub fn build(keys: &[GridKey], mu: &[f64], g: &[f64], s: &[Axis]) -> CmiTable {
        let mut cells: BTreeMap<Vec<(u64, u64)>, [[u64; 2]; 2]> = BTreeMap::new();
        let n = keys.len();
        for a in 0..n {
            for b in 0..n {
                if a == b || mu[a] == mu[b] || g[a] == g[b] {
                    continue;
                }
                let cell: Vec<(u64, u64)> = s
                    .iter()
                    .map(|ax| (keys[a][ax.index()], keys[b][ax.index()]))
                    .collect();
                let vm = usize::from(mu[a] < mu[b]);
                let vg = usize::from(g[a] < g[b]);
                cells.entry(cell).or_default()[vm][vg] += 1;
            }
        }
        CmiTable { cells }
    }

    pub fn total(&self) -> u64 {
        self.cells.values().map(|c| c.iter().flatten().sum::<u64>()).sum()
    }

    /// Probabilities `p₀₀..p₁₁` of one cell.
    pub fn probabilities(counts: &[[u64; 2]; 2]) -> [[f64; 2]; 2] {
        let n: u64 = counts.iter().flatten().sum();
        counts.map(|r| r.map(|c| c as f64 / n as f64))
    }
}

/// Conditional mutual information and entropy in bits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cmi {
    pub mutual_information: f64,
    pub entropy: f64,
    /// `I / H`, `None` when `H = 0` or no pair is usable.
    pub normalized: Option<f64>,
    pub pairs: u64,
}

fn plogp_ratio(p: f64, q: f64) -> f64 {
    if p > 0.0 {
        p * (p / q).log2()
    } else {
        0.0
    }
}

pub fn conditional_mi(keys: &[GridKey], mu: &[f64], g: &[f64], s: &[Axis]) -> Cmi {
    let table = CmiTable::build(keys, mu, g, s);
    let total = table.total();
    let (mut mi, mut h) = (0.0, 0.0);
    for counts in table.cells.values() {
        let n: u64 = counts.iter().flatten().sum();
        let w = n as f64 / total as f64;
        let p = CmiTable::probabilities(counts);
        let pm = [p[0][0] + p[0][1], p[1][0] + p[1][1]];
        let pg = [p[0][0] + p[1][0], p[0][1] + p[1][1]];
        let mut cell_mi = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                cell_mi += plogp_ratio(p[i][j], pm[i] * pg[j]);
            }
        }
        let cell_h: f64 = pg.iter().map(|&q| -plogp_ratio(q, 1.0)).sum();
        mi += w * cell_mi;
        h += w * cell_h;
    }
    let normalized = (total > 0 && h > 0.0).then(|| (mi / h).clamp(0.0, 1.0));
    Cmi {
        mutual_information: mi,
        entropy: h,
        normalized,
        pairs: total,
    }
}

/// Every axis subset of size at most two, the empty set first.
pub fn subsets_up_to_two() -> Vec<Vec<Axis>> {
    let mut out = vec![vec![]];
    out.extend(Axis::ALL.iter().map(|&a| vec![a]));
    for i in 0..Axis::ALL.len() {
        for j in i + 1..Axis::ALL.len() {
            out.push(vec![Axis::ALL[i], Axis::ALL[j]]);
        }
    }
    out
}

/// Normalized CMI summary used by the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmiSummary {
    /// Conditioned on each single axis, in column order.
    pub per_axis: Vec<Option<f64>>,
    pub unconditioned: Option<f64>,
    pub min_size_one: Option<f64>,
    pub min_size_two: Option<f64>,
    /// Minimum over all subsets with at most two axes.
    pub k: Option<f64>,
}

fn min_defined(v: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    v.into_iter().flatten().reduce(f64::min)
}

pub fn cmi_summary(keys: &[GridKey], mu: &[f64], g: &[f64]) -> CmiSummary {
    let mut per_axis = Vec::new();
    let mut pairs = Vec::new();
    let mut unconditioned = None;
    for s in subsets_up_to_two() {
        let v = conditional_mi(keys, mu, g, &s).normalized;
        match s.len() {
            0 => unconditioned = v,
            1 => per_axis.push(v),
            _ => pairs.push(v),
        }
    }
    let min_size_one = min_defined(per_axis.iter().copied());
    let min_size_two = min_defined(pairs.iter().copied());
    let k = min_defined([unconditioned, min_size_one, min_size_two]);
    CmiSummary {
        per_axis,
        unconditioned,
        min_size_one,
        min_size_two,
        k,
    }
}

/// `K(μ)`: the smallest normalized CMI over subsets of at most two axes.
pub fn k_min_cmi(keys: &[GridKey], mu: &[f64], g: &[f64]) -> Option<f64> {
    cmi_summary(keys, mu, g).k
}

/// Conditional entropy of the gap sign given each single axis.
pub fn axis_entropies(keys: &[GridKey], g: &[f64]) -> Vec<f64> {
    // the measure is irrelevant to H; use the gap itself so no extra pairs drop
    Axis::ALL
        .iter()
        .map(|&a| conditional_mi(keys, g, g, &[a]).entropy)
        .collect()
}
