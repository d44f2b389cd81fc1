use super::network::{ConvLayer, Layer, Network};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, BN_EPSILON};

/// Fold each batch-norm layer into the conv before it, preserving eval-mode
/// outputs: with `s = γ / sqrt(var + ε)`, `W' = s·W` per output channel and
/// `b' = s·(b − mean) + β`.
pub fn fuse_batchnorm<T: Scalar>(net: &Network<T>) -> Result<Network<T>> {
    let mut layers: Vec<Layer<T>> = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let Layer::BatchNorm(bn) = layer else {
            layers.push(layer.clone());
            continue;
        };
        let Some(Layer::Conv(conv)) = layers.last_mut() else {
            return Err(Error::UnsupportedTopology(format!(
                "batch norm at layer {i} does not follow a conv"
            )));
        };
        let per_out = conv.weight.len() / conv.spec.c_out;
        let mut weight = conv.weight.data().to_vec();
        let mut bias = conv.bias.data().to_vec();
        for c in 0..conv.spec.c_out {
            let s = bn.gamma[c].f64() / (bn.running_var[c].f64() + BN_EPSILON).sqrt();
            for w in &mut weight[c * per_out..(c + 1) * per_out] {
                *w = T::of(w.f64() * s);
            }
            bias[c] = T::of(s * (bias[c].f64() - bn.running_mean[c].f64()) + bn.beta[c].f64());
        }
        *conv = ConvLayer {
            spec: conv.spec,
            weight: Tensor::new(conv.weight.shape().to_vec(), weight)?,
            bias: Tensor::new(vec![conv.spec.c_out], bias)?,
        };
    }
    Network::new(net.input_shape, net.num_classes, layers)
}
