mod common;

use common::*;
use gencomplex::model::*;
use gencomplex::tensor::{softmax_cross_entropy_batch, BatchNormState, Rng, Tensor, BN_EPSILON};
use gencomplex::Error;

fn config(depth: usize, width: usize) -> HyperConfig {
    HyperConfig {
        batch_size: 32,
        dropout: 0.0,
        learning_rate: 0.01,
        depth,
        optimizer: OptimizerKind::MomentumSgd,
        weight_decay: 0.0,
        width,
    }
}

#[test]
fn nin_depth_two_width_192_layout() {
    let (net, _) = build_nin(&config(2, 192), [3, 32, 32], 10, &mut Rng::new(0)).unwrap();
    let convs: Vec<_> = net.conv_layers().map(|c| c.spec).collect();
    assert_eq!(convs.len(), 7);
    for block in convs[..6].chunks(3) {
        assert_eq!((block[0].k, block[0].stride, block[0].pad), (3, 2, 1));
        assert_eq!((block[1].k, block[1].stride), (1, 1));
        assert_eq!((block[2].k, block[2].stride), (1, 1));
        assert!(block.iter().all(|s| s.c_out == 192));
    }
    assert_eq!(convs[6].c_out, 10);
    assert_eq!(convs[6].k, 1);
    assert_eq!(net.conv_input_sizes()[3], (16, 16));
    assert_eq!(net.conv_input_sizes()[6], (8, 8));
    assert!(matches!(net.layers.last(), Some(Layer::GlobalAvgPool)));
    let dropouts = net.layers.iter().filter(|l| matches!(l, Layer::Dropout(_))).count();
    assert_eq!(dropouts, 2);
    assert_eq!(conv_count(2), 7);
}

#[test]
fn build_is_deterministic_and_snapshots_init() {
    let cfg = config(2, 8);
    let (a, a0) = build_nin(&cfg, [3, 16, 16], 10, &mut Rng::new(5)).unwrap();
    let (b, _) = build_nin(&cfg, [3, 16, 16], 10, &mut Rng::new(5)).unwrap();
    let bits = |n: &Network| n.param_vecc().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a, a0);
    let (c, _) = build_nin(&cfg, [3, 16, 16], 10, &mut Rng::new(6)).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn spatial_collapse_is_invalid_architecture() {
    let err = build_nin(&config(8, 4), [3, 1, 1], 10, &mut Rng::new(0));
    assert!(err.is_ok(), "stride-2 padded convs keep a 1×1 map alive");
    let bad = Network::<f32>::from_spec(
        [1, 2, 2],
        2,
        &[
            LayerSpec::Conv(conv_spec(1, 2, 5, 1, 0)),
            LayerSpec::GlobalAvgPool,
        ],
    );
    assert!(matches!(bad, Err(Error::InvalidArchitecture(_))));
    assert!(matches!(
        build_nin(&config(0, 4), [3, 8, 8], 10, &mut Rng::new(0)),
        Err(Error::InvalidArchitecture(_))
    ));
}

#[test]
fn single_conv_parameter_count() {
    let net = Network::<f32>::from_spec(
        [3, 4, 4],
        16,
        &[LayerSpec::Conv(conv_spec(3, 16, 3, 1, 1)), LayerSpec::GlobalAvgPool],
    )
    .unwrap();
    assert_eq!(net.num_params(), 9 * 3 * 16 + 16);
}

#[test]
fn depth_strictly_increases_parameter_count() {
    let omega = |d| {
        build_nin(&config(d, 8), [3, 16, 16], 10, &mut Rng::new(0))
            .unwrap()
            .0
            .num_params()
    };
    assert!(omega(1) < omega(2) && omega(2) < omega(3));
}

#[test]
fn vecc_round_trip_and_norm() {
    let mut rng = Rng::new(3);
    let net = mixed_net::<f32>(0.0, &mut rng);
    let w = net.param_vecc();
    let mut other = Network::<f32>::from_spec(net.input_shape, 3, &net.spec()).unwrap();
    other.scatter(&w).unwrap();
    assert_eq!(other.param_vecc(), w);
    let per_tensor: usize = net
        .layers
        .iter()
        .map(|l| match l {
            Layer::Conv(c) => c.weight.len() + c.bias.len(),
            Layer::BatchNorm(s) => s.gamma.len() + s.beta.len(),
            _ => 0,
        })
        .sum();
    assert_eq!(w.len(), per_tensor);
    assert_eq!(net.num_params(), per_tensor);

    let flat: f64 = w.iter().map(|&v| (v as f64).powi(2)).sum();
    let mut by_tensor = 0.0;
    for l in &net.layers {
        match l {
            Layer::Conv(c) => by_tensor += c.weight.sq_norm() + c.bias.sq_norm(),
            Layer::BatchNorm(s) => {
                by_tensor += s.gamma.iter().chain(&s.beta).map(|&v| (v as f64).powi(2)).sum::<f64>()
            }
            _ => {}
        }
    }
    assert!((flat - by_tensor).abs() <= 1e-6 * flat.max(1.0));
    assert!(other.scatter(&w[1..]).is_err());
}

#[test]
fn fusion_preserves_eval_logits() {
    let mut rng = Rng::new(11);
    let net = mixed_net::<f32>(0.3, &mut rng);
    let fused = fuse_batchnorm(&net).unwrap();
    assert!(!fused.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_))));
    let x = random_tensor::<f32>(&[100, 2, 6, 6], &mut rng);
    let a = net.predict(&x).unwrap();
    let b = fused.predict(&x).unwrap();
    assert!(max_abs_diff(a.data(), b.data()) <= 1e-5);
}

#[test]
fn fusion_with_identity_bn_keeps_weights() {
    let mut rng = Rng::new(2);
    let conv = random_conv::<f64>(conv_spec(1, 2, 1, 1, 0), 1.0, &mut rng);
    let layers = vec![conv.clone(), Layer::BatchNorm(BatchNormState::identity(2)), Layer::GlobalAvgPool];
    let fused = fuse_batchnorm(&Network::new([1, 2, 2], 2, layers).unwrap()).unwrap();
    let (Layer::Conv(orig), Layer::Conv(f)) = (&conv, &fused.layers[0]) else {
        panic!("conv expected");
    };
    let scale = 1.0 / (1.0 + BN_EPSILON).sqrt();
    for (a, b) in orig.weight.data().iter().zip(f.weight.data()) {
        assert!((a * scale - b).abs() < 1e-12);
    }
    assert!((scale - 1.0).abs() < 1e-5);
}

#[test]
fn fusion_gamma_two_doubles_channel_scale() {
    let mut rng = Rng::new(4);
    let conv = random_conv::<f64>(conv_spec(1, 2, 1, 1, 0), 1.0, &mut rng);
    let mut bn = BatchNormState::<f64>::identity(2);
    bn.gamma[1] = 2.0;
    let layers = vec![conv.clone(), Layer::BatchNorm(bn), Layer::GlobalAvgPool];
    let fused = fuse_batchnorm(&Network::new([1, 2, 2], 2, layers).unwrap()).unwrap();
    let (Layer::Conv(orig), Layer::Conv(f)) = (&conv, &fused.layers[0]) else {
        panic!("conv expected");
    };
    let s = (1.0 + BN_EPSILON).sqrt();
    let w0 = orig.weight.data();
    let w1 = f.weight.data();
    assert!((w1[0] - w0[0] / s).abs() < 1e-12);
    assert!((w1[1] - 2.0 * w0[1] / s).abs() < 1e-12);
}

#[test]
fn bn_without_conv_is_unsupported() {
    let layers = vec![
        Layer::<f32>::BatchNorm(BatchNormState::identity(2)),
        Layer::Conv(ConvLayer {
            spec: conv_spec(2, 2, 1, 1, 0),
            weight: Tensor::zeros(&[2, 2, 1, 1]),
            bias: Tensor::zeros(&[2]),
        }),
        Layer::GlobalAvgPool,
    ];
    let net = Network::new([2, 2, 2], 2, layers).unwrap();
    assert!(matches!(fuse_batchnorm(&net), Err(Error::UnsupportedTopology(_))));
}

/// Central-difference check of the full backward pass in f64, train-mode
/// batch norm and a fixed dropout mask. Coordinates whose difference
/// straddles a ReLU or max-pool kink are retried on a fresh network.
#[test]
fn backward_matches_finite_differences() {
    const H: f64 = 1e-3;
    let mut checked = 0;
    let mut retries = 0;
    for trial in 0..6u64 {
        let mut rng = Rng::new(100 + trial);
        let net = mixed_net::<f64>(0.25, &mut rng);
        let x = random_tensor::<f64>(&[4, 2, 6, 6], &mut rng);
        let y = vec![0, 1, 2, 1];
        let mask_rng = Rng::new(900 + trial);
        let loss = |n: &Network<f64>| {
            let (logits, _) = n.forward(&x, ForwardMode::Train(&mut mask_rng.clone())).unwrap();
            softmax_cross_entropy_batch(&logits, &y).unwrap().mean_loss
        };
        let (_, grad, _) = net
            .loss_and_grad(&x, &y, ForwardMode::Train(&mut mask_rng.clone()))
            .unwrap();
        let w = net.param_vecc();
        let mut probe = net.clone();
        let mut bad = 0;
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += H;
            probe.scatter(&wp).unwrap();
            let lp = loss(&probe);
            wp[i] -= 2.0 * H;
            probe.scatter(&wp).unwrap();
            let lm = loss(&probe);
            let numeric = (lp - lm) / (2.0 * H);
            let rel = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-2);
            if rel > 1e-3 {
                bad += 1;
            }
        }
        if bad == 0 {
            checked += 1;
        } else {
            assert!(bad <= 2, "trial {trial}: {bad} coordinates disagree");
            retries += 1;
        }
    }
    assert!(checked >= 4, "only {checked} clean trials ({retries} hit kinks)");
}

#[test]
fn eval_backward_matches_finite_differences() {
    const H: f64 = 1e-4;
    let mut rng = Rng::new(7);
    let net = mixed_net::<f64>(0.5, &mut rng);
    let x = random_tensor::<f64>(&[3, 2, 6, 6], &mut rng);
    let y = vec![2, 0, 1];
    let loss = |n: &Network<f64>| {
        softmax_cross_entropy_batch(&n.predict(&x).unwrap(), &y)
            .unwrap()
            .mean_loss
    };
    let (_, grad, _) = net.loss_and_grad(&x, &y, ForwardMode::Eval).unwrap();
    let w = net.param_vecc();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let mut wp = w.clone();
        wp[i] += H;
        probe.scatter(&wp).unwrap();
        let lp = loss(&probe);
        wp[i] -= 2.0 * H;
        probe.scatter(&wp).unwrap();
        let lm = loss(&probe);
        let numeric = (lp - lm) / (2.0 * H);
        worst = worst.max((numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-2));
    }
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

#[test]
fn state_tensors_round_trip() {
    let mut rng = Rng::new(8);
    let net = mixed_net::<f32>(0.0, &mut rng);
    let mut other = Network::<f32>::from_spec(net.input_shape, 3, &net.spec()).unwrap();
    for (name, _, data) in net.state_tensors() {
        other.set_state_tensor(&name, &data).unwrap();
    }
    assert_eq!(other, net);
    assert!(other.set_state_tensor("layer0.gamma", &[1.0]).is_err());
}

#[test]
fn axis_and_optimizer_names() {
    let names: Vec<_> = Axis::ALL.iter().map(|a| a.name()).collect();
    assert_eq!(
        names,
        ["batch_size", "dropout", "learning_rate", "depth", "optimizer", "weight_decay", "width"]
    );
    assert_eq!(OptimizerKind::Adam.name(), "adam");
    assert!(OptimizerKind::MomentumSgd.ordinal() < OptimizerKind::RmsProp.ordinal());
}
