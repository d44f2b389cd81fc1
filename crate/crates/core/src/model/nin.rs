use super::network::{ConvLayer, ConvSpec, Layer, Network};
use super::HyperConfig;
use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, Rng, Tensor};

/// Parameters at initialization, `w⁰`.
pub type InitSnapshot = Network;

/// Conv layers in a network of `depth` NiN blocks plus the classifier.
pub fn conv_count(depth: usize) -> usize {
    3 * depth + 1
}

/// He fan-in normal weights, zero bias.
fn he_conv(spec: ConvSpec, rng: &mut Rng) -> Layer {
    let fan_in = (spec.c_in * spec.k * spec.k) as f64;
    let std = (2.0 / fan_in).sqrt();
    let weight = Tensor::from_fn(&spec.weight_shape(), |_| (std * rng.normal()) as f32);
    Layer::Conv(ConvLayer {
        spec,
        weight,
        bias: Tensor::zeros(&[spec.c_out]),
    })
}

/// `depth` blocks of (3×3 stride-2 conv, 1×1 conv, 1×1 conv), each conv
/// followed by batch norm and ReLU, dropout after each block, then a 1×1
/// conv to `num_classes` channels and global average pooling.
pub fn build_nin(
    config: &HyperConfig,
    input_shape: [usize; 3],
    num_classes: usize,
    rng: &mut Rng,
) -> Result<(Network, InitSnapshot)> {
    if config.depth == 0 || config.width == 0 {
        return Err(Error::InvalidArchitecture(
            "need at least one block of nonzero width".into(),
        ));
    }
    if num_classes < 2 {
        return Err(Error::InvalidArchitecture("need at least two classes".into()));
    }
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(Error::invalid(format!("dropout {} not in [0, 1)", config.dropout)));
    }
    let mut layers = Vec::new();
    let mut c_in = input_shape[0];
    let mut n = input_shape[1].min(input_shape[2]);
    for _ in 0..config.depth {
        if n + 2 < 3 {
            return Err(Error::InvalidArchitecture(format!(
                "{} blocks collapse a {}x{} input",
                config.depth, input_shape[1], input_shape[2]
            )));
        }
        n = (n - 1) / 2 + 1;
        for (k, stride, pad) in [(3, 2, 1), (1, 1, 0), (1, 1, 0)] {
            let spec = ConvSpec {
                c_in,
                c_out: config.width,
                k,
                stride,
                pad,
            };
            layers.push(he_conv(spec, rng));
            layers.push(Layer::BatchNorm(BatchNormState::identity(config.width)));
            layers.push(Layer::Relu);
            c_in = config.width;
        }
        layers.push(Layer::Dropout(config.dropout));
    }
    let classifier = ConvSpec {
        c_in,
        c_out: num_classes,
        k: 1,
        stride: 1,
        pad: 0,
    };
    layers.push(he_conv(classifier, rng));
    layers.push(Layer::GlobalAvgPool);
    let net = Network::new(input_shape, num_classes, layers)?;
    Ok((net.clone(), net))
}
