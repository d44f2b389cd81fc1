use crate::model::Network;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VcMeasures {
    pub mu_vc: f64,
    pub mu_param: f64,
}

/// Architecture-only measures. With `d` conv layers, input side `n` and
/// `q = Σ kᵢ² c_{i−1} (cᵢ + 1)`:
/// `μ_VC = (4000 κ sqrt(d · log₂(6dn)³ · q) + sqrt(ln(1/δ)))²` and `μ_param = q`.
pub fn vc_measures(net: &Network, delta: f64) -> VcMeasures {
    let mut q = 0.0;
    let mut d = 0.0;
    for c in net.conv_layers() {
        let s = c.spec;
        q += (s.k * s.k * s.c_in * (s.c_out + 1)) as f64;
        d += 1.0;
    }
    let n = net.input_shape[1] as f64;
    let kappa = net.num_classes as f64;
    let inner = d * (6.0 * d * n).log2().powi(3) * q;
    let root = 4000.0 * kappa * inner.sqrt() + (1.0 / delta).ln().sqrt();
    VcMeasures {
        mu_vc: root * root,
        mu_param: q,
    }
}
