use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, dropout_mask,
    global_avg_pool, global_avg_pool_backward, maxpool2d_backward, maxpool2d_forward, relu,
    relu_backward, softmax_cross_entropy_batch, BatchCrossEntropy, BatchNormCache, BatchNormMode,
    BatchNormState, MaxPoolCache, Rng, Scalar, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.k, self.k]
    }
}

/// Weight-free description of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv(ConvSpec),
    BatchNorm { channels: usize },
    Relu,
    Dropout { p: f64 },
    MaxPool { k: usize, stride: usize, pad: usize },
    GlobalAvgPool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T = f32> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T = f32> {
    Conv(ConvLayer<T>),
    BatchNorm(BatchNormState<T>),
    Relu,
    Dropout(f64),
    MaxPool { k: usize, stride: usize, pad: usize },
    GlobalAvgPool,
}

impl<T: Scalar> Layer<T> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => LayerSpec::Conv(c.spec),
            Layer::BatchNorm(s) => LayerSpec::BatchNorm {
                channels: s.channels(),
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Dropout(p) => LayerSpec::Dropout { p: *p },
            Layer::MaxPool { k, stride, pad } => LayerSpec::MaxPool {
                k: *k,
                stride: *stride,
                pad: *pad,
            },
            Layer::GlobalAvgPool => LayerSpec::GlobalAvgPool,
        }
    }

    fn num_params(&self) -> usize {
        match self {
            Layer::Conv(c) => c.weight.len() + c.bias.len(),
            Layer::BatchNorm(s) => 2 * s.channels(),
            _ => 0,
        }
    }
}

/// Forward-pass behaviour of batch norm and dropout.
pub enum ForwardMode<'a> {
    /// Running statistics, dropout off.
    Eval,
    /// Batch statistics, dropout masks drawn from the generator.
    Train(&'a mut Rng),
}

enum Cache<T> {
    Conv(Tensor<T>),
    BatchNorm(BatchNormCache<T>),
    Relu(Tensor<T>),
    Dropout(Option<Vec<T>>),
    MaxPool(MaxPoolCache),
    GlobalAvgPool(Vec<usize>),
}

/// Activations cached by a forward pass for the backward pass.
pub struct Tape<T = f32> {
    caches: Vec<Cache<T>>,
}

impl<T: Scalar> Tape<T> {
    /// Batch mean and variance of each train-mode batch-norm layer.
    pub fn batch_stats(&self) -> impl Iterator<Item = &(Vec<f64>, Vec<f64>)> {
        self.caches.iter().filter_map(|c| match c {
            Cache::BatchNorm(b) => b.batch_stats.as_ref(),
            _ => None,
        })
    }
}

/// A feed-forward convolutional network on `[c, h, w]` inputs producing
/// `[batch, num_classes]` logits.
///
/// Parameters flatten (`vecc`) in layer order; a conv layer contributes its
/// weight in `[c_out, c_in, row, col]` order followed by its bias, a batch
/// norm layer contributes `gamma` then `beta`. Running statistics are state,
/// not parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(input_shape: [usize; 3], num_classes: usize, layers: Vec<Layer<T>>) -> Result<Self> {
        let net = Network {
            input_shape,
            num_classes,
            layers,
        };
        net.activation_shapes()?;
        Ok(net)
    }

    /// Zero weights and identity batch norm for the given layout.
    pub fn from_spec(input_shape: [usize; 3], num_classes: usize, spec: &[LayerSpec]) -> Result<Self> {
        let layers = spec
            .iter()
            .map(|s| match s {
                LayerSpec::Conv(c) => Layer::Conv(ConvLayer {
                    spec: *c,
                    weight: Tensor::zeros(&c.weight_shape()),
                    bias: Tensor::zeros(&[c.c_out]),
                }),
                LayerSpec::BatchNorm { channels } => {
                    Layer::BatchNorm(BatchNormState::identity(*channels))
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Dropout { p } => Layer::Dropout(*p),
                LayerSpec::MaxPool { k, stride, pad } => Layer::MaxPool {
                    k: *k,
                    stride: *stride,
                    pad: *pad,
                },
                LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            })
            .collect();
        Network::new(input_shape, num_classes, layers)
    }

    pub fn spec(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Shape of the activation entering each layer, plus the output, for a
    /// single example (no batch axis).
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let arch = |m: String| Error::InvalidArchitecture(m);
        let out_size = |n: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            if s == 0 || k == 0 || k > n + 2 * p {
                return Err(arch(format!(
                    "window {k} (stride {s}, pad {p}) collapses spatial size {n}"
                )));
            }
            Ok((n + 2 * p - k) / s + 1)
        };
        let mut shape = self.input_shape.to_vec();
        let mut shapes = vec![shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                Layer::Conv(c) => {
                    if shape.len() != 3 || shape[0] != c.spec.c_in {
                        return Err(arch(format!(
                            "layer {i}: conv expects {} channels, gets {shape:?}",
                            c.spec.c_in
                        )));
                    }
                    if c.weight.shape() != c.spec.weight_shape() || c.bias.len() != c.spec.c_out {
                        return Err(arch(format!("layer {i}: conv tensors do not match spec")));
                    }
                    let h = out_size(shape[1], c.spec.k, c.spec.stride, c.spec.pad)?;
                    let w = out_size(shape[2], c.spec.k, c.spec.stride, c.spec.pad)?;
                    vec![c.spec.c_out, h, w]
                }
                Layer::BatchNorm(s) => {
                    if shape[0] != s.channels() {
                        return Err(arch(format!("layer {i}: batch norm channel mismatch")));
                    }
                    shape
                }
                Layer::MaxPool { k, stride, pad } => {
                    if shape.len() != 3 {
                        return Err(arch(format!("layer {i}: pooling needs a feature map")));
                    }
                    vec![
                        shape[0],
                        out_size(shape[1], *k, *stride, *pad)?,
                        out_size(shape[2], *k, *stride, *pad)?,
                    ]
                }
                Layer::GlobalAvgPool => {
                    if shape.len() != 3 {
                        return Err(arch(format!("layer {i}: pooling needs a feature map")));
                    }
                    vec![shape[0]]
                }
                Layer::Relu | Layer::Dropout(_) => shape,
            };
            shapes.push(shape.clone());
        }
        if shape != [self.num_classes] {
            return Err(arch(format!(
                "network output {shape:?} is not {} logits",
                self.num_classes
            )));
        }
        Ok(shapes)
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &ConvLayer<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    /// Spatial `(h, w)` of the input to each conv layer.
    pub fn conv_input_sizes(&self) -> Vec<(usize, usize)> {
        let shapes = self.activation_shapes().expect("validated at construction");
        self.layers
            .iter()
            .zip(&shapes)
            .filter(|(l, _)| matches!(l, Layer::Conv(_)))
            .map(|(_, s)| (s[1], s[2]))
            .collect()
    }

    /// ω, the number of trainable parameters.
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn param_vecc(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.extend_from_slice(c.weight.data());
                    out.extend_from_slice(c.bias.data());
                }
                Layer::BatchNorm(s) => {
                    out.extend_from_slice(&s.gamma);
                    out.extend_from_slice(&s.beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Inverse of [`Network::param_vecc`].
    pub fn scatter(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut off = 0;
        let mut take = |dst: &mut [T]| {
            dst.copy_from_slice(&params[off..off + dst.len()]);
            off += dst.len();
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    take(c.weight.data_mut());
                    take(c.bias.data_mut());
                }
                Layer::BatchNorm(s) => {
                    take(&mut s.gamma);
                    take(&mut s.beta);
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Named parameter and state tensors, in layer order.
    pub fn state_tensors(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    out.push((format!("layer{i}.weight"), c.weight.shape().to_vec(), c.weight.data().to_vec()));
                    out.push((format!("layer{i}.bias"), vec![c.spec.c_out], c.bias.data().to_vec()));
                }
                Layer::BatchNorm(s) => {
                    let ch = vec![s.channels()];
                    out.push((format!("layer{i}.gamma"), ch.clone(), s.gamma.clone()));
                    out.push((format!("layer{i}.beta"), ch.clone(), s.beta.clone()));
                    out.push((format!("layer{i}.running_mean"), ch.clone(), s.running_mean.clone()));
                    out.push((format!("layer{i}.running_var"), ch, s.running_var.clone()));
                }
                _ => {}
            }
        }
        out
    }

    /// Overwrite one tensor named as in [`Network::state_tensors`].
    pub fn set_state_tensor(&mut self, name: &str, data: &[T]) -> Result<()> {
        let bad = || Error::invalid(format!("unknown or mis-sized state tensor {name}"));
        let (layer, field) = name
            .strip_prefix("layer")
            .and_then(|s| s.split_once('.'))
            .ok_or_else(bad)?;
        let idx: usize = layer.parse().map_err(|_| bad())?;
        let dst: &mut [T] = match (self.layers.get_mut(idx), field) {
            (Some(Layer::Conv(c)), "weight") => c.weight.data_mut(),
            (Some(Layer::Conv(c)), "bias") => c.bias.data_mut(),
            (Some(Layer::BatchNorm(s)), "gamma") => &mut s.gamma,
            (Some(Layer::BatchNorm(s)), "beta") => &mut s.beta,
            (Some(Layer::BatchNorm(s)), "running_mean") => &mut s.running_mean,
            (Some(Layer::BatchNorm(s)), "running_var") => &mut s.running_var,
            _ => return Err(bad()),
        };
        if dst.len() != data.len() {
            return Err(bad());
        }
        dst.copy_from_slice(data);
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(ConvLayer {
                    spec: c.spec,
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                }),
                Layer::BatchNorm(s) => Layer::BatchNorm(s.cast()),
                Layer::Relu => Layer::Relu,
                Layer::Dropout(p) => Layer::Dropout(*p),
                Layer::MaxPool { k, stride, pad } => Layer::MaxPool {
                    k: *k,
                    stride: *stride,
                    pad: *pad,
                },
                Layer::GlobalAvgPool => Layer::GlobalAvgPool,
            })
            .collect();
        Network {
            input_shape: self.input_shape,
            num_classes: self.num_classes,
            layers,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 4 || x.shape()[1..] != self.input_shape {
            return Err(Error::invalid(format!(
                "input batch {:?} does not match network input {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Eval-mode logits without recording a tape.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv(c) => {
                    conv2d_forward(&h, &c.weight, Some(&c.bias), c.spec.stride, c.spec.pad)?
                }
                Layer::BatchNorm(s) => batchnorm_forward(&h, s, BatchNormMode::Eval)?.0,
                Layer::Relu => relu(&h),
                Layer::Dropout(_) => h,
                Layer::MaxPool { k, stride, pad } => maxpool2d_forward(&h, *k, *stride, *pad)?.0,
                Layer::GlobalAvgPool => global_avg_pool(&h)?,
            };
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Tensor<T>, mut mode: ForwardMode<'_>) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Conv(c) => {
                    let y = conv2d_forward(&h, &c.weight, Some(&c.bias), c.spec.stride, c.spec.pad)?;
                    (y, Cache::Conv(h))
                }
                Layer::BatchNorm(s) => {
                    let bm = match mode {
                        ForwardMode::Eval => BatchNormMode::Eval,
                        ForwardMode::Train(_) => BatchNormMode::Train,
                    };
                    let (y, c) = batchnorm_forward(&h, s, bm)?;
                    (y, Cache::BatchNorm(c))
                }
                Layer::Relu => (relu(&h), Cache::Relu(h)),
                Layer::Dropout(p) => match &mut mode {
                    ForwardMode::Train(rng) if *p > 0.0 => {
                        let mask = dropout_mask::<T>(h.len(), *p, rng);
                        h.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
                        (h, Cache::Dropout(Some(mask)))
                    }
                    _ => (h, Cache::Dropout(None)),
                },
                Layer::MaxPool { k, stride, pad } => {
                    let (y, c) = maxpool2d_forward(&h, *k, *stride, *pad)?;
                    (y, Cache::MaxPool(c))
                }
                Layer::GlobalAvgPool => {
                    let shape = h.shape().to_vec();
                    (global_avg_pool(&h)?, Cache::GlobalAvgPool(shape))
                }
            };
            h = next;
            caches.push(cache);
        }
        Ok((h, Tape { caches }))
    }

    /// Gradient of a scalar loss with respect to every parameter, in `vecc`
    /// order, given the gradient `grad_logits` of that loss at the output.
    pub fn backward(&self, tape: &Tape<T>, grad_logits: &Tensor<T>) -> Result<Vec<T>> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::invalid("tape was recorded on a different network"));
        }
        let mut grads: Vec<Vec<T>> = vec![Vec::new(); self.layers.len()];
        let mut g = grad_logits.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            g = match (layer, cache) {
                (Layer::Conv(c), Cache::Conv(input)) => {
                    let (dx, dw, db) =
                        conv2d_backward(input, &c.weight, &g, c.spec.stride, c.spec.pad, i > 0)?;
                    let mut pg = dw.into_data();
                    pg.extend_from_slice(db.data());
                    grads[i] = pg;
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (Layer::BatchNorm(s), Cache::BatchNorm(c)) => {
                    let (dx, mut dgamma, dbeta) = batchnorm_backward(c, s, &g);
                    dgamma.extend(dbeta);
                    grads[i] = dgamma;
                    dx
                }
                (Layer::Relu, Cache::Relu(input)) => relu_backward(input, &g),
                (Layer::Dropout(_), Cache::Dropout(mask)) => {
                    if let Some(mask) = mask {
                        g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= *m);
                    }
                    g
                }
                (Layer::MaxPool { .. }, Cache::MaxPool(c)) => maxpool2d_backward(c, &g),
                (Layer::GlobalAvgPool, Cache::GlobalAvgPool(shape)) => {
                    global_avg_pool_backward(shape, &g)
                }
                _ => return Err(Error::invalid("tape does not match network layers")),
            };
        }
        Ok(grads.concat())
    }

    /// Mean cross-entropy of a batch and its parameter gradient.
    pub fn loss_and_grad(
        &self,
        x: &Tensor<T>,
        labels: &[usize],
        mode: ForwardMode<'_>,
    ) -> Result<(BatchCrossEntropy<T>, Vec<T>, Tape<T>)> {
        let (logits, tape) = self.forward(x, mode)?;
        let ce = softmax_cross_entropy_batch(&logits, labels)?;
        let grad = self.backward(&tape, &ce.grad)?;
        Ok((ce, grad, tape))
    }

    /// Fold train-mode batch statistics from `tape` into running statistics.
    pub fn update_running_stats(&mut self, tape: &Tape<T>) {
        let mut stats = tape.batch_stats();
        for layer in &mut self.layers {
            if let Layer::BatchNorm(s) = layer {
                if let Some((mean, var)) = stats.next() {
                    s.update_running(mean, var);
                }
            }
        }
    }
}
