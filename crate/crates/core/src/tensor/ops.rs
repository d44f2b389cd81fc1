//! Forward and backward kernels on NCHW batches.
//!
//! Output extent of a windowed op is `floor((n + 2p - k) / s) + 1`. Padding is
//! zeros, and for max-pooling the padded zeros take part in the max.

use serde::{Deserialize, Serialize};

use super::{Rng, Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

fn window_out(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if k == 0 || k > n + 2 * pad {
        return Err(Error::invalid(format!(
            "window {k} does not fit input {n} with padding {pad}"
        )));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

/// Lift `[c, h, w]` to a batch of one.
fn as_batch<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, bool)> {
    match input.shape().len() {
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(input.shape());
            Ok((input.clone().reshape(s)?, true))
        }
        4 => Ok((input.clone(), false)),
        r => Err(Error::invalid(format!("expected rank 3 or 4 input, got rank {r}"))),
    }
}

fn drop_batch<T: Scalar>(t: Tensor<T>, squeeze: bool) -> Tensor<T> {
    if squeeze {
        let s = t.shape()[1..].to_vec();
        t.reshape(s).expect("same element count")
    } else {
        t
    }
}

/// Shapes of one convolution application.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let [batch, c_in, h, w] = *input else {
            return Err(Error::invalid(format!("conv input must be NCHW, got {input:?}")));
        };
        let [c_out, wc_in, kh, kw] = *weight else {
            return Err(Error::invalid(format!(
                "conv kernel must be [c_out, c_in, k, k], got {weight:?}"
            )));
        };
        if kh != kw {
            return Err(Error::invalid("only square kernels are supported"));
        }
        if wc_in != c_in {
            return Err(Error::invalid(format!(
                "kernel expects {wc_in} input channels, input has {c_in}"
            )));
        }
        let out_h = window_out(h, kh, stride, pad)?;
        let out_w = window_out(w, kw, stride, pad)?;
        Ok(ConvGeometry {
            batch,
            c_in,
            h,
            w,
            c_out,
            k: kh,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    fn patch_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, o: usize, kk: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let cols = g.cols();
    let ohw = g.out_h * g.out_w;
    let mut col = vec![T::zero(); g.patch_rows() * cols];
    for ci in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for b in 0..g.batch {
                    let plane = &x[(b * g.c_in + ci) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ky, g.h) else {
                            continue;
                        };
                        let base = b * ohw + oy * g.out_w;
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kx, g.w) {
                                dst[base + ox] = plane[iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeometry) -> Vec<T> {
    let cols = g.cols();
    let ohw = g.out_h * g.out_w;
    let mut x = vec![T::zero(); g.batch * g.c_in * g.h * g.w];
    for ci in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for b in 0..g.batch {
                    let plane = &mut x[(b * g.c_in + ci) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ky, g.h) else {
                            continue;
                        };
                        let base = b * ohw + oy * g.out_w;
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kx, g.w) {
                                plane[iy * g.w + ix] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[c, b * hw]` <-> `[b, c, hw]`.
fn channel_major<T: Scalar>(x: &[T], batch: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            out[ch * batch * hw + b * hw..][..hw].copy_from_slice(&x[(b * c + ch) * hw..][..hw]);
        }
    }
    out
}

fn batch_major<T: Scalar>(x: &[T], batch: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            out[(b * c + ch) * hw..][..hw].copy_from_slice(&x[ch * batch * hw + b * hw..][..hw]);
        }
    }
    out
}

/// Batched convolution `[b, c_in, h, w] -> [b, c_out, h', w']` with optional bias.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.len() != g.c_out {
            return Err(Error::invalid(format!(
                "bias has {} entries for {} output channels",
                b.len(),
                g.c_out
            )));
        }
    }
    let col = im2col(input.data(), &g);
    let cols = g.cols();
    let mut out = vec![T::zero(); g.c_out * cols];
    T::gemm(
        g.c_out,
        g.patch_rows(),
        cols,
        T::one(),
        weight.data(),
        false,
        &col,
        false,
        T::zero(),
        &mut out,
    );
    if let Some(b) = bias {
        for (co, row) in out.chunks_mut(cols).enumerate() {
            let v = b.data()[co];
            row.iter_mut().for_each(|x| *x += v);
        }
    }
    let ohw = g.out_h * g.out_w;
    Tensor::new(
        vec![g.batch, g.c_out, g.out_h, g.out_w],
        batch_major(&out, g.batch, g.c_out, ohw),
    )
}

/// Single-image or batched convolution without bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (x, squeeze) = as_batch(input)?;
    Ok(drop_batch(conv2d_forward(&x, kernel, None, stride, pad)?, squeeze))
}

/// Gradients of a convolution: `(d input, d weight, d bias)`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, pad)?;
    if grad_out.shape() != [g.batch, g.c_out, g.out_h, g.out_w] {
        return Err(Error::invalid(format!(
            "grad_out shape {:?} does not match conv output",
            grad_out.shape()
        )));
    }
    let cols = g.cols();
    let ohw = g.out_h * g.out_w;
    let dout = channel_major(grad_out.data(), g.batch, g.c_out, ohw);
    let col = im2col(input.data(), &g);
    let mut dw = vec![T::zero(); g.c_out * g.patch_rows()];
    T::gemm(
        g.c_out,
        cols,
        g.patch_rows(),
        T::one(),
        &dout,
        false,
        &col,
        true,
        T::zero(),
        &mut dw,
    );
    let db: Vec<T> = dout
        .chunks(cols)
        .map(|row| T::of(row.iter().map(|v| v.f64()).sum::<f64>()))
        .collect();
    let dx = if want_input_grad {
        Some(Tensor::new(
            input.shape().to_vec(),
            input_grad(weight.data(), &dout, &g),
        )?)
    } else {
        None
    };
    Ok((
        dx,
        Tensor::new(weight.shape().to_vec(), dw)?,
        Tensor::new(vec![g.c_out], db)?,
    ))
}

fn input_grad<T: Scalar>(weight: &[T], dout_cm: &[T], g: &ConvGeometry) -> Vec<T> {
    let cols = g.cols();
    let mut dcol = vec![T::zero(); g.patch_rows() * cols];
    T::gemm(
        g.patch_rows(),
        g.c_out,
        cols,
        T::one(),
        weight,
        true,
        dout_cm,
        false,
        T::zero(),
        &mut dcol,
    );
    col2im(&dcol, g)
}

/// Adjoint of the (bias-free) convolution with respect to its input.
pub fn conv2d_transpose_input<T: Scalar>(
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    input_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input_shape, weight.shape(), stride, pad)?;
    if grad_out.shape() != [g.batch, g.c_out, g.out_h, g.out_w] {
        return Err(Error::invalid("grad_out shape does not match conv output"));
    }
    let dout = channel_major(grad_out.data(), g.batch, g.c_out, g.out_h * g.out_w);
    Tensor::new(input_shape.to_vec(), input_grad(weight.data(), &dout, &g))
}

/// Indices of the winning input per pooled output; `None` marks a padded zero.
#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    pub in_shape: Vec<usize>,
    pub argmax: Vec<Option<usize>>,
}

pub fn maxpool2d_forward<T: Scalar>(
    input: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, MaxPoolCache)> {
    let [b, c, h, w] = *input.shape() else {
        return Err(Error::invalid("maxpool input must be NCHW"));
    };
    let oh = window_out(h, k, stride, pad)?;
    let ow = window_out(w, k, stride, pad)?;
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut arg = None;
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                        let (v, a) = if inside {
                            let idx = base + iy as usize * w + ix as usize;
                            (x[idx], Some(idx))
                        } else {
                            (T::zero(), None)
                        };
                        if v > best {
                            best = v;
                            arg = a;
                        }
                    }
                }
                out.push(best);
                argmax.push(arg);
            }
        }
    }
    Ok((
        Tensor::new(vec![b, c, oh, ow], out)?,
        MaxPoolCache {
            in_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (x, squeeze) = as_batch(input)?;
    Ok(drop_batch(maxpool2d_forward(&x, k, stride, pad)?.0, squeeze))
}

pub fn maxpool2d_backward<T: Scalar>(cache: &MaxPoolCache, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(&cache.in_shape);
    let d = dx.data_mut();
    for (g, arg) in grad_out.data().iter().zip(&cache.argmax) {
        if let Some(i) = arg {
            d[*i] += *g;
        }
    }
    dx
}

/// Per-channel batch-norm parameters and running statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn identity(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// `running <- momentum * running + (1 - momentum) * batch`.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        for c in 0..self.channels() {
            let m = BN_MOMENTUM * self.running_mean[c].f64() + (1.0 - BN_MOMENTUM) * mean[c];
            let v = BN_MOMENTUM * self.running_var[c].f64() + (1.0 - BN_MOMENTUM) * var[c];
            self.running_mean[c] = T::of(m);
            self.running_var[c] = T::of(v);
        }
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormState<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::of(x.f64())).collect();
        BatchNormState {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T = f32> {
    pub mode: BatchNormMode,
    pub xhat: Vec<T>,
    pub inv_std: Vec<f64>,
    /// Biased batch mean and variance (train mode only).
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Normalizes per channel over `(batch, h, w)`; any rank-2+ input whose axis 1
/// is the channel axis works.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    state: &BatchNormState<T>,
    mode: BatchNormMode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let shape = input.shape();
    if shape.len() < 2 || shape[1] != state.channels() {
        return Err(Error::invalid(format!(
            "batch norm over {} channels got input {shape:?}",
            state.channels()
        )));
    }
    let (b, c) = (shape[0], shape[1]);
    let hw: usize = shape[2..].iter().product();
    let x = input.data();
    let count = (b * hw) as f64;
    let (mean, var, batch_stats) = match mode {
        BatchNormMode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for bi in 0..b {
                for (ch, m) in mean.iter_mut().enumerate() {
                    *m += x[(bi * c + ch) * hw..][..hw].iter().map(|v| v.f64()).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for bi in 0..b {
                for ch in 0..c {
                    var[ch] += x[(bi * c + ch) * hw..][..hw]
                        .iter()
                        .map(|v| (v.f64() - mean[ch]).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            (mean.clone(), var.clone(), Some((mean, var)))
        }
        BatchNormMode::Eval => (
            state.running_mean.iter().map(|v| v.f64()).collect(),
            state.running_var.iter().map(|v| v.f64()).collect(),
            None,
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ch in 0..c {
            let (g, be) = (state.gamma[ch].f64(), state.beta[ch].f64());
            let off = (bi * c + ch) * hw;
            for i in off..off + hw {
                let xh = (x[i].f64() - mean[ch]) * inv_std[ch];
                xhat[i] = T::of(xh);
                out[i] = T::of(g * xh + be);
            }
        }
    }
    Ok((
        Tensor::new(shape.to_vec(), out)?,
        BatchNormCache {
            mode,
            xhat,
            inv_std,
            batch_stats,
        },
    ))
}

/// `(d input, d gamma, d beta)`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    state: &BatchNormState<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let shape = grad_out.shape();
    let (b, c) = (shape[0], shape[1]);
    let hw: usize = shape[2..].iter().product();
    let dy = grad_out.data();
    let count = (b * hw) as f64;
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * hw;
            for i in off..off + hw {
                dgamma[ch] += dy[i].f64() * cache.xhat[i].f64();
                dbeta[ch] += dy[i].f64();
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for bi in 0..b {
        for ch in 0..c {
            let g = state.gamma[ch].f64();
            let off = (bi * c + ch) * hw;
            for i in off..off + hw {
                let v = match cache.mode {
                    BatchNormMode::Eval => dy[i].f64() * g * cache.inv_std[ch],
                    BatchNormMode::Train => {
                        g * cache.inv_std[ch] / count
                            * (count * dy[i].f64()
                                - dbeta[ch]
                                - cache.xhat[i].f64() * dgamma[ch])
                    }
                };
                dx[i] = T::of(v);
            }
        }
    }
    let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect();
    (
        Tensor::new(shape.to_vec(), dx).expect("same shape"),
        cast(dgamma),
        cast(dbeta),
    )
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through ReLU given the layer input.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// `[b, c, h, w] -> [b, c]`, or `[c, h, w] -> [c]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (x, squeeze) = as_batch(input)?;
    let [b, c, h, w] = *x.shape() else {
        unreachable!()
    };
    let hw = h * w;
    let data = x
        .data()
        .chunks(hw)
        .map(|p| T::of(p.iter().map(|v| v.f64()).sum::<f64>() / hw as f64))
        .collect();
    let shape = if squeeze { vec![c] } else { vec![b, c] };
    Tensor::new(shape, data)
}

pub fn global_avg_pool_backward<T: Scalar>(in_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let hw: usize = in_shape[2..].iter().product();
    let scale = T::of(1.0 / hw as f64);
    let mut data = Vec::with_capacity(grad_out.len() * hw);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * scale, hw));
    }
    Tensor::new(in_shape.to_vec(), data).expect("matching element count")
}

/// Inverted-dropout multipliers: `0` with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.uniform() < p { T::zero() } else { keep })
        .collect()
}

/// Loss and class probabilities for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    pub probs: Vec<f64>,
}

fn stable_softmax(logits: impl Iterator<Item = f64> + Clone) -> (Vec<f64>, f64) {
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / total).collect(), max + total.ln())
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<CrossEntropy> {
    if logits.len() < 2 {
        return Err(Error::invalid("cross-entropy needs at least two classes"));
    }
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let (probs, log_z) = stable_softmax(logits.iter().map(|v| v.f64()));
    Ok(CrossEntropy {
        loss: log_z - logits[label].f64(),
        probs,
    })
}

/// Batched cross-entropy over `[b, κ]` logits.
#[derive(Clone, Debug)]
pub struct BatchCrossEntropy<T = f32> {
    pub mean_loss: f64,
    pub losses: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
    /// Gradient of the mean loss with respect to the logits.
    pub grad: Tensor<T>,
}

pub fn softmax_cross_entropy_batch<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<BatchCrossEntropy<T>> {
    let [b, k] = *logits.shape() else {
        return Err(Error::invalid("logits must be [batch, classes]"));
    };
    if labels.len() != b {
        return Err(Error::invalid("one label per example required"));
    }
    let mut losses = Vec::with_capacity(b);
    let mut probs = Vec::with_capacity(b);
    let mut grad = Vec::with_capacity(b * k);
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let ce = softmax_cross_entropy(row, y)?;
        for (j, p) in ce.probs.iter().enumerate() {
            let onehot = if j == y { 1.0 } else { 0.0 };
            grad.push(T::of((p - onehot) / b as f64));
        }
        losses.push(ce.loss);
        probs.push(ce.probs);
    }
    Ok(BatchCrossEntropy {
        mean_loss: losses.iter().sum::<f64>() / b as f64,
        losses,
        probs,
        grad: Tensor::new(vec![b, k], grad)?,
    })
}
