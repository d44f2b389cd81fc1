use crate::error::Result;
use crate::model::{Layer, Network};
use crate::tensor::{conv2d_forward, global_avg_pool, Rng, Tensor};

use super::spectral::{conv_spectral_norm, SpectralMethod};
use super::{over_margin, MeasureConfig, MeasureId, Measured, StridedSpectral};

/// Squared norms of one conv layer and of its displacement from init.
/// Frobenius norms include the bias; spectral norms are of the linear
/// operator and so exclude it.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorms {
    pub k: usize,
    pub c_out: usize,
    pub spec_sq: f64,
    pub fro_sq: f64,
    pub dist_fro_sq: f64,
    pub dist_spec_sq: f64,
}

/// Per-conv-layer norms of `net` against the reference `init`.
pub fn layer_norms(net: &Network, init: &Network, config: &MeasureConfig) -> Result<Vec<LayerNorms>> {
    let method = match config.strided_spectral {
        StridedSpectral::PowerIteration => SpectralMethod::PowerIteration {
            iterations: config.power_iterations,
            tolerance: config.power_tolerance,
        },
        StridedSpectral::Stride1Fft => SpectralMethod::Fft,
    };
    let sizes = net.conv_input_sizes();
    let mut rng = Rng::new(0x5eed);
    net.conv_layers()
        .zip(init.conv_layers())
        .zip(sizes)
        .map(|((c, c0), (h, w))| {
            let s = c.spec;
            let input = [s.c_in, h, w];
            let diff = Tensor::new(
                c.weight.shape().to_vec(),
                c.weight.data().iter().zip(c0.weight.data()).map(|(a, b)| a - b).collect(),
            )?;
            let spec = conv_spectral_norm(&c.weight, input, s.stride, s.pad, method, &mut rng)?;
            let dspec = conv_spectral_norm(&diff, input, s.stride, s.pad, method, &mut rng)?;
            Ok(LayerNorms {
                k: s.k,
                c_out: s.c_out,
                spec_sq: spec * spec,
                fro_sq: c.weight.sq_norm() + c.bias.sq_norm(),
                dist_fro_sq: diff.sq_norm()
                    + c.bias.data().iter().zip(c0.bias.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>(),
                dist_spec_sq: dspec * dspec,
            })
        })
        .collect()
}

/// Spectral-norm family. Products run in log space.
pub fn spectral_measures(
    norms: &[LayerNorms],
    net: &Network,
    gamma: f64,
    input_bound: f64,
    m: usize,
    delta: f64,
) -> Vec<(MeasureId, Measured)> {
    let d = norms.len() as f64;
    let n = net.input_shape[1] as f64;
    let log_prod: f64 = norms.iter().map(|l| l.spec_sq.ln()).sum();
    let prod = log_prod.exp();
    let fro_over_spec: f64 = norms.iter().map(|l| l.fro_sq / l.spec_sq).sum();
    let dist_over_spec: f64 = norms.iter().map(|l| l.dist_fro_sq / l.spec_sq).sum();
    let width_term: f64 = norms.iter().map(|l| l.k as f64 * (l.c_out as f64).sqrt()).sum();
    let c = (84.0 * input_bound * width_term + (4.0 * n * n * d).ln().sqrt()).powi(2);
    let log_term = (m as f64 / delta).ln();
    let lg = if gamma > 0.0 { 2.0 * gamma.ln() } else { f64::NAN };
    let margin = |v: f64| Measured::from_result(over_margin(v, gamma));
    let margin_log = |log_v: f64| {
        if gamma > 0.0 {
            Measured::value((log_v - lg).exp())
        } else {
            Measured::undefined(super::REASON_MARGIN)
        }
    };
    vec![
        (MeasureId::SpecInit, margin(c * prod * dist_over_spec + log_term)),
        (MeasureId::SpecOrig, margin(c * prod * fro_over_spec + log_term)),
        (MeasureId::SpecInitMain, margin(prod * dist_over_spec)),
        (MeasureId::SpecOrigMain, margin(prod * fro_over_spec)),
        (MeasureId::ProdOfSpecOverMargin, margin_log(log_prod)),
        (MeasureId::ProdOfSpec, Measured::value(prod)),
        (MeasureId::FroOverSpec, Measured::value(fro_over_spec)),
        (
            MeasureId::SumOfSpecOverMargin,
            if gamma > 0.0 {
                Measured::value(d * ((log_prod - lg) / d).exp())
            } else {
                Measured::undefined(super::REASON_MARGIN)
            },
        ),
        (MeasureId::SumOfSpec, Measured::value(d * (log_prod / d).exp())),
        (
            MeasureId::DistSpecInit,
            Measured::value(norms.iter().map(|l| l.dist_spec_sq).sum()),
        ),
    ]
}

/// Frobenius-norm family.
pub fn frobenius_measures(norms: &[LayerNorms], gamma: f64) -> Vec<(MeasureId, Measured)> {
    let d = norms.len() as f64;
    let log_prod: f64 = norms.iter().map(|l| l.fro_sq.ln()).sum();
    let undefined = || Measured::undefined(super::REASON_MARGIN);
    let lg = 2.0 * gamma.ln();
    vec![
        (
            MeasureId::ProdOfFroOverMargin,
            if gamma > 0.0 { Measured::value((log_prod - lg).exp()) } else { undefined() },
        ),
        (MeasureId::ProdOfFro, Measured::value(log_prod.exp())),
        (
            MeasureId::SumOfFroOverMargin,
            if gamma > 0.0 {
                Measured::value(d * ((log_prod - lg) / d).exp())
            } else {
                undefined()
            },
        ),
        (MeasureId::SumOfFro, Measured::value(d * (log_prod / d).exp())),
        (
            MeasureId::FrobDistance,
            Measured::value(norms.iter().map(|l| l.dist_fro_sq).sum()),
        ),
        (MeasureId::ParamNorm, Measured::value(norms.iter().map(|l| l.fro_sq).sum())),
    ]
}

/// Average pooling with zero padding counted in the divisor.
fn avg_pool(x: &Tensor<f64>, k: usize, stride: usize, pad: usize) -> Result<Tensor<f64>> {
    let [b, c, h, w] = *x.shape() else {
        unreachable!("feature maps are NCHW")
    };
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += plane[iy as usize * w + ix as usize];
                        }
                    }
                }
                out.push(acc / (k * k) as f64);
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

/// `Σᵢ f_{w²}(1)[i]`: every parameter squared, an all-ones input, ReLU and
/// dropout as identity (activations are nonnegative) and max-pool replaced
/// by average-pool.
pub fn path_norm(net: &Network) -> Result<f64> {
    let [c, h, w] = net.input_shape;
    let mut x = Tensor::<f64>::full(&[1, c, h, w], 1.0);
    for layer in &net.layers {
        x = match layer {
            Layer::Conv(conv) => {
                let sq = |t: &Tensor| t.cast::<f64>().map(|v| v * v);
                conv2d_forward(&x, &sq(&conv.weight), Some(&sq(&conv.bias)), conv.spec.stride, conv.spec.pad)?
            }
            Layer::MaxPool { k, stride, pad } => avg_pool(&x, *k, *stride, *pad)?,
            Layer::GlobalAvgPool => global_avg_pool(&x)?,
            Layer::BatchNorm(_) => {
                return Err(crate::error::Error::UnsupportedTopology(
                    "path norm needs a batch-norm-free network".into(),
                ))
            }
            Layer::Relu | Layer::Dropout(_) => x,
        };
    }
    Ok(x.data().iter().sum())
}
