use crate::data::Dataset;
use crate::error::Result;
use crate::model::Network;
use crate::tensor::Rng;
use crate::train::per_example_gradients;

/// `((d + 1)² / m) Σᵢ ⟨w, ∇ℓᵢ⟩²` over `sample` examples (all when 0).
pub fn fisher_rao(net: &Network, train: &Dataset, sample: usize, rng: &mut Rng) -> Result<f64> {
    let idx: Vec<usize> = if sample == 0 || sample >= train.len() {
        (0..train.len()).collect()
    } else {
        rng.sample_indices(train.len(), sample)
    };
    let w = net.param_vecc();
    let d = net.conv_layers().count() as f64;
    let mut acc = 0.0;
    for chunk in idx.chunks(64) {
        for g in per_example_gradients(net, train, chunk)? {
            let ip: f64 = w.iter().zip(&g).map(|(&a, &b)| a as f64 * b as f64).sum();
            acc += ip * ip;
        }
    }
    Ok((d + 1.0).powi(2) * acc / idx.len() as f64)
}
