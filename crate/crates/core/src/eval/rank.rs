use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::Axis;

/// Grid coordinates of one model: the bit pattern of every axis value.
pub type GridKey = [u64; 7];

pub fn grid_key(config: &crate::model::HyperConfig) -> GridKey {
    Axis::ALL.map(|a| config.axis_value(a).to_bits())
}

/// Kendall's τ over ordered distinct pairs with `sign(0) = 0`, via Knight's
/// O(n log n) pair counting. `None` for fewer than two points.
pub fn kendall_tau(mu: &[f64], g: &[f64]) -> Option<f64> {
    assert_eq!(mu.len(), g.len());
    let n = mu.len();
    if n < 2 {
        return None;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| mu[a].total_cmp(&mu[b]).then(g[a].total_cmp(&g[b])));

    let pairs = |t: u64| t * (t.saturating_sub(1)) / 2;
    let (mut tied_x, mut tied_xy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if mu[a] == mu[b] {
            run_x += 1;
            if g[a] == g[b] {
                run_xy += 1;
            } else {
                tied_xy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tied_x += pairs(run_x);
            tied_xy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tied_x += pairs(run_x);
    tied_xy += pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
    let mut buf = ys.clone();
    let swaps = merge_count(&mut ys, &mut buf);

    let mut tied_y = 0u64;
    let mut run = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            tied_y += pairs(run);
            run = 1;
        }
    }
    tied_y += pairs(run);

    let n0 = pairs(n as u64);
    let s = n0 as i128 - tied_x as i128 - tied_y as i128 + tied_xy as i128 - 2 * swaps as i128;
    Some(s as f64 / n0 as f64)
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// τ restricted to single-axis slices of one axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisTau {
    pub axis: Axis,
    /// Mean slice τ, `None` if the axis has fewer than two levels or no
    /// slice holds two models.
    pub psi: Option<f64>,
    pub slices: usize,
    /// Slices dropped because fewer than two models survived.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Granulated {
    pub axes: Vec<AxisTau>,
    /// Mean of the defined `psi` values.
    pub psi: Option<f64>,
}

pub fn axis_tau(keys: &[GridKey], mu: &[f64], g: &[f64], axis: Axis) -> AxisTau {
    let a = axis.index();
    let mut levels: Vec<u64> = keys.iter().map(|k| k[a]).collect();
    levels.sort_unstable();
    levels.dedup();
    let mut out = AxisTau {
        axis,
        psi: None,
        slices: 0,
        skipped: 0,
    };
    if levels.len() < 2 {
        return out;
    }
    let mut slices: BTreeMap<GridKey, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        let mut rest = *k;
        rest[a] = 0;
        slices.entry(rest).or_default().push(i);
    }
    let mut sum = 0.0;
    for members in slices.values() {
        let m: Vec<f64> = members.iter().map(|&i| mu[i]).collect();
        let y: Vec<f64> = members.iter().map(|&i| g[i]).collect();
        match kendall_tau(&m, &y) {
            Some(t) => {
                sum += t;
                out.slices += 1;
            }
            None => out.skipped += 1,
        }
    }
    if out.slices > 0 {
        out.psi = Some(sum / out.slices as f64);
    }
    out
}

pub fn granulated_kendall(keys: &[GridKey], mu: &[f64], g: &[f64]) -> Granulated {
    let axes: Vec<AxisTau> = Axis::ALL.iter().map(|&a| axis_tau(keys, mu, g, a)).collect();
    let defined: Vec<f64> = axes.iter().filter_map(|a| a.psi).collect();
    let psi = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Granulated { axes, psi }
}
