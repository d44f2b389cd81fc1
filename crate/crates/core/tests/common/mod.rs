#![allow(dead_code)]

pub mod oracle;

use gencomplex::data::Dataset;
use gencomplex::model::{ConvLayer, ConvSpec, Layer, Network};
use gencomplex::tensor::{BatchNormState, Rng, Scalar, Tensor};

pub fn conv_spec(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> ConvSpec {
    ConvSpec {
        c_in,
        c_out,
        k,
        stride,
        pad,
    }
}

pub fn random_conv<T: Scalar>(spec: ConvSpec, scale: f64, rng: &mut Rng) -> Layer<T> {
    Layer::Conv(ConvLayer {
        spec,
        weight: Tensor::from_fn(&spec.weight_shape(), |_| T::of(scale * rng.normal())),
        bias: Tensor::from_fn(&[spec.c_out], |_| T::of(0.1 * rng.normal())),
    })
}

pub fn random_bn<T: Scalar>(channels: usize, rng: &mut Rng) -> Layer<T> {
    let mut s = BatchNormState::<T>::identity(channels);
    for c in 0..channels {
        s.gamma[c] = T::of(rng.uniform_in(0.5, 1.5));
        s.beta[c] = T::of(rng.uniform_in(-0.5, 0.5));
        s.running_mean[c] = T::of(rng.uniform_in(-0.5, 0.5));
        s.running_var[c] = T::of(rng.uniform_in(0.5, 2.0));
    }
    Layer::BatchNorm(s)
}

pub fn random_tensor<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.normal()))
}

/// conv(3×3, s2) → BN → ReLU → dropout → max-pool → conv(1×1) → BN → ReLU
/// → conv(1×1) to the classes → global average pool.
pub fn mixed_net<T: Scalar>(dropout: f64, rng: &mut Rng) -> Network<T> {
    let layers = vec![
        random_conv(conv_spec(2, 4, 3, 2, 1), 0.5, rng),
        random_bn(4, rng),
        Layer::Relu,
        Layer::Dropout(dropout),
        Layer::MaxPool {
            k: 2,
            stride: 1,
            pad: 0,
        },
        random_conv(conv_spec(4, 3, 1, 1, 0), 0.5, rng),
        random_bn(3, rng),
        Layer::Relu,
        random_conv(conv_spec(3, 3, 1, 1, 0), 0.5, rng),
        Layer::GlobalAvgPool,
    ];
    Network::new([2, 6, 6], 3, layers).unwrap()
}

/// BN-free conv net for measures that need a fused topology.
pub fn plain_net(rng: &mut Rng) -> Network {
    let layers = vec![
        random_conv(conv_spec(3, 4, 3, 2, 1), 0.4, rng),
        Layer::Relu,
        random_conv(conv_spec(4, 4, 1, 1, 0), 0.4, rng),
        Layer::Relu,
        random_conv(conv_spec(4, 3, 1, 1, 0), 0.4, rng),
        Layer::GlobalAvgPool,
    ];
    Network::new([3, 6, 6], 3, layers).unwrap()
}

pub fn random_dataset(m: usize, shape: [usize; 3], classes: usize, rng: &mut Rng) -> Dataset {
    let [c, h, w] = shape;
    let images = random_tensor(&[m, c, h, w], rng);
    let labels = (0..m).map(|i| i % classes).collect();
    Dataset::new(images, labels, classes).unwrap()
}

pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.f64() - y.f64()).abs())
        .fold(0.0, f64::max)
}
