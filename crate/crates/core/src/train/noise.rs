use crate::data::Dataset;
use crate::error::Result;
use crate::model::{ForwardMode, Network};
use crate::tensor::{Rng, Scalar};

/// Eval-mode gradient of the cross-entropy of each listed example.
pub fn per_example_gradients<T: Scalar>(
    net: &Network<T>,
    data: &Dataset,
    indices: &[usize],
) -> Result<Vec<Vec<T>>> {
    indices
        .iter()
        .map(|&i| {
            let (x, y) = data.batch(&[i]);
            let (_, g, _) = net.loss_and_grad(&x.cast(), &y, ForwardMode::Eval)?;
            Ok(g)
        })
        .collect()
}

/// Mean over `sample_size` sampled examples of `‖∇ℓᵢ − ḡ‖²`, the trace of
/// the empirical gradient covariance.
pub fn gradient_noise<T: Scalar>(
    net: &Network<T>,
    data: &Dataset,
    sample_size: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let idx = rng.sample_indices(data.len(), sample_size);
    let grads = per_example_gradients(net, data, &idx)?;
    Ok(gradient_variance(&grads))
}

/// `(1/n) Σᵢ ‖gᵢ − ḡ‖²` accumulated in `f64`.
pub fn gradient_variance<T: Scalar>(grads: &[Vec<T>]) -> f64 {
    let Some(first) = grads.first() else {
        return 0.0;
    };
    let n = grads.len() as f64;
    let mut mean = vec![0.0f64; first.len()];
    for g in grads {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v.f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    grads
        .iter()
        .map(|g| {
            g.iter()
                .zip(&mean)
                .map(|(v, m)| (v.f64() - m).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}
