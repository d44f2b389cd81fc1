mod common;

use common::*;
use gencomplex::data::{synth_dataset, Dataset, SynthSpec};
use gencomplex::model::{ForwardMode, HyperConfig, LayerSpec, Network, OptimizerKind};
use gencomplex::tensor::{Rng, Tensor};
use gencomplex::train::*;

/// Hand-stepped reference updates on `f(w) = ½ Σ aᵢ (wᵢ − cᵢ)²`.
fn reference(kind: OptimizerKind, lr: f64, wd: f64, w0: &[f64], a: &[f64], c: &[f64], steps: usize) -> Vec<f64> {
    let mut w = w0.to_vec();
    let n = w.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    for t in 1..=steps {
        for i in 0..n {
            let g = a[i] * (w[i] - c[i]) + wd * w[i];
            match kind {
                OptimizerKind::MomentumSgd => {
                    m[i] = 0.9 * m[i] + g;
                    w[i] -= lr * m[i];
                }
                OptimizerKind::Adam => {
                    m[i] = 0.9 * m[i] + 0.1 * g;
                    v[i] = 0.999 * v[i] + 0.001 * g * g;
                    let mh = m[i] / (1.0 - 0.9f64.powi(t as i32));
                    let vh = v[i] / (1.0 - 0.999f64.powi(t as i32));
                    w[i] -= lr * mh / (vh.sqrt() + 1e-3);
                }
                OptimizerKind::RmsProp => {
                    m[i] = 0.9 * m[i] + 0.1 * g * g;
                    w[i] -= lr * g / (m[i].sqrt() + 1e-8);
                }
            }
        }
    }
    w
}

#[test]
fn optimizers_match_hand_stepped_quadratic() {
    let a = [1.0, 3.0, 0.5];
    let c = [0.5, -1.0, 2.0];
    let w0 = [0.0, 0.0, 0.0];
    for kind in [OptimizerKind::MomentumSgd, OptimizerKind::Adam, OptimizerKind::RmsProp] {
        for wd in [0.0, 0.1] {
            let mut opt = OptimizerState::<f64>::new(kind, 0.05, wd, 3);
            let mut w = w0.to_vec();
            for _ in 0..10 {
                let g: Vec<f64> = (0..3).map(|i| a[i] * (w[i] - c[i])).collect();
                opt.step(&mut w, &g);
            }
            let want = reference(kind, 0.05, wd, &w0, &a, &c, 10);
            assert!(max_abs_diff(&w, &want) < 1e-6, "{kind:?} wd={wd}");
        }
    }
}

#[test]
fn optimizers_reach_quadratic_minimizer() {
    let a = [1.0, 2.0];
    let c = [0.3, -0.7];
    for (kind, lr) in [
        (OptimizerKind::MomentumSgd, 0.1),
        (OptimizerKind::Adam, 0.01),
        (OptimizerKind::RmsProp, 0.001),
    ] {
        let mut opt = OptimizerState::<f64>::new(kind, lr, 0.0, 2);
        let mut w = vec![0.0, 0.0];
        for _ in 0..20000 {
            let g: Vec<f64> = (0..2).map(|i| a[i] * (w[i] - c[i])).collect();
            opt.step(&mut w, &g);
        }
        assert!(max_abs_diff(&w, &c) < 1e-3, "{kind:?}: {w:?}");
    }
}

#[test]
fn zero_weight_decay_is_the_plain_update() {
    let mut opt = OptimizerState::<f64>::new(OptimizerKind::MomentumSgd, 0.1, 0.0, 2);
    let mut w = vec![1.0, -2.0];
    opt.step(&mut w, &[0.5, 0.25]);
    assert_eq!(w, vec![1.0 - 0.05, -2.0 - 0.025]);
}

#[test]
fn schedule_drops_learning_rate_at_milestones() {
    let s = Schedule {
        lr_milestones: vec![10, 20],
        ..Schedule::default()
    };
    assert_eq!(s.learning_rate(1.0, 9), 1.0);
    assert!((s.learning_rate(1.0, 10) - 0.1).abs() < 1e-15);
    assert!((s.learning_rate(1.0, 25) - 0.01).abs() < 1e-15);
}

fn toy() -> gencomplex::data::Split {
    let spec = SynthSpec {
        num_classes: 2,
        train_per_class: 20,
        test_per_class: 20,
        image_size: 4,
        channels: 3,
        blobs: 2,
        noise: 0.05,
        label_noise: 0.0,
    };
    synth_dataset(&spec, 9).unwrap()
}

fn toy_config() -> HyperConfig {
    HyperConfig {
        batch_size: 8,
        dropout: 0.0,
        learning_rate: 0.05,
        depth: 1,
        optimizer: OptimizerKind::MomentumSgd,
        weight_decay: 0.0,
        width: 8,
    }
}

fn toy_schedule() -> Schedule {
    Schedule {
        max_steps: 5000,
        lr_milestones: vec![4000],
        ce_threshold: 0.01,
        eval_every: 10,
        loss_batches: 5,
        loss_batch_size: 8,
        noise_sample: 40,
    }
}

#[test]
fn separable_toy_converges() {
    let split = toy();
    let rec = train_model(&toy_config(), &split, 1, &toy_schedule()).unwrap();
    assert!(rec.trace.converged);
    assert!(rec.trace.final_train_ce <= 0.01);
    let (ce, err) = evaluate(&rec.network, &split.train).unwrap();
    assert!(ce < 0.05 && err == 0.0);
    let t = &rec.trace;
    let s01 = t.steps_to_01.unwrap();
    assert!(s01 <= s01 + t.steps_01_to_001.unwrap());
    assert!(s01 + t.steps_01_to_001.unwrap() <= t.total_steps);
    assert!(t.grad_noise_epoch1.unwrap() > 0.0);
    assert!((rec.gap - (rec.test_error - rec.train_error)).abs() < 1e-15);
}

#[test]
fn training_is_deterministic() {
    let split = toy();
    let a = train_model(&toy_config(), &split, 3, &toy_schedule()).unwrap();
    let b = train_model(&toy_config(), &split, 3, &toy_schedule()).unwrap();
    assert_eq!(a, b);
    let bits = |r: &ModelRecord| r.network.param_vecc().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn budget_exhaustion_is_not_converged() {
    let split = toy();
    let sched = Schedule {
        max_steps: 3,
        ..toy_schedule()
    };
    let rec = train_model(&toy_config(), &split, 1, &sched).unwrap();
    assert!(!rec.trace.converged);
    assert_eq!(rec.trace.total_steps, 3);
    assert!(rec.trace.steps_01_to_001.is_none());
}

#[test]
fn divergence_is_training_failed() {
    let split = toy();
    let cfg = HyperConfig {
        learning_rate: 1e30,
        ..toy_config()
    };
    let r = train_model(&cfg, &split, 1, &toy_schedule());
    assert!(matches!(r, Err(gencomplex::Error::TrainingFailed(_))), "{r:?}");
}

#[test]
fn tiling_loss_estimate_equals_full_mean() {
    let mut rng = Rng::new(4);
    let net = plain_net(&mut rng);
    let data = random_dataset(60, [3, 6, 6], 3, &mut rng);
    let (full, _) = evaluate(&net, &data).unwrap();
    let est = estimate_training_loss(&net, &data, 3, 20, &mut Rng::new(1)).unwrap();
    assert!((est - full).abs() < 1e-6, "{est} vs {full}");
}

#[test]
fn constant_logits_give_log_kappa() {
    let net = Network::<f32>::from_spec(
        [3, 4, 4],
        5,
        &[LayerSpec::Conv(conv_spec(3, 5, 1, 1, 0)), LayerSpec::GlobalAvgPool],
    )
    .unwrap();
    let data = random_dataset(30, [3, 4, 4], 5, &mut Rng::new(0));
    let est = estimate_training_loss(&net, &data, 7, 4, &mut Rng::new(2)).unwrap();
    assert!((est - 5f64.ln()).abs() < 1e-6);
}

#[test]
fn loss_estimate_spread_is_bounded() {
    let mut rng = Rng::new(5);
    let net = plain_net(&mut rng);
    let data = random_dataset(500, [3, 6, 6], 3, &mut rng);
    let (batches, bs) = (10, 16);
    let losses: Vec<f64> = (0..data.len())
        .map(|i| {
            let (x, y) = data.batch(&[i]);
            net.loss_and_grad(&x, &y, ForwardMode::Eval).unwrap().0.mean_loss
        })
        .collect();
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    let pop_sd = (losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / losses.len() as f64).sqrt();
    let ests: Vec<f64> = (0..20)
        .map(|s| estimate_training_loss(&net, &data, batches, bs, &mut Rng::new(s)).unwrap())
        .collect();
    let em = ests.iter().sum::<f64>() / 20.0;
    let sd = (ests.iter().map(|e| (e - em).powi(2)).sum::<f64>() / 19.0).sqrt();
    // sampling without replacement never exceeds the i.i.d. standard error
    let bound = 2.0 * pop_sd / ((batches * bs) as f64).sqrt();
    assert!(sd <= bound, "spread {sd} above {bound}");
}

#[test]
fn repeated_example_has_no_gradient_noise() {
    let mut rng = Rng::new(6);
    let net = plain_net(&mut rng);
    let one = random_tensor::<f32>(&[1, 3, 6, 6], &mut rng);
    let images = Tensor::new(vec![8, 3, 6, 6], one.data().repeat(8)).unwrap();
    let data = Dataset::new(images, vec![1; 8], 3).unwrap();
    let noise = gradient_noise(&net, &data, 8, &mut rng).unwrap();
    assert!(noise.abs() < 1e-12);
}

#[test]
fn opposite_gradients_give_squared_norm() {
    let v = vec![0.5f64, -1.5, 2.0];
    let minus: Vec<f64> = v.iter().map(|x| -x).collect();
    let want: f64 = v.iter().map(|x| x * x).sum();
    assert!((gradient_variance(&[v, minus]) - want).abs() < 1e-12);
}

/// 1×1 conv on a single pixel with zero weights gives `p = ½` for both
/// examples, so inputs `x` and `−x` with one label make opposite weight
/// gradients and identical bias gradients; the noise is `‖g_W‖²`.
#[test]
fn mirrored_inputs_give_opposite_gradients() {
    let net = Network::<f64>::from_spec(
        [2, 1, 1],
        2,
        &[LayerSpec::Conv(conv_spec(2, 2, 1, 1, 0)), LayerSpec::GlobalAvgPool],
    )
    .unwrap();
    let images = Tensor::new(vec![2, 2, 1, 1], vec![1.0, 2.0, -1.0, -2.0]).unwrap();
    let data = Dataset::new(images, vec![0, 0], 2).unwrap();
    let g = per_example_gradients(&net, &data, &[0, 1]).unwrap();
    for i in 0..4 {
        assert!((g[0][i] + g[1][i]).abs() < 1e-12);
    }
    for i in 4..6 {
        assert!((g[0][i] - g[1][i]).abs() < 1e-12);
    }
    // (p − y) ⊗ x = (−½, ½) ⊗ (1, 2)
    let v: f64 = g[0][..4].iter().map(|x| x * x).sum();
    assert!((v - 0.25 * 5.0 * 2.0).abs() < 1e-12);
    assert!((gradient_variance(&g) - v).abs() < 1e-12);
}

#[test]
fn gradient_noise_is_stable_across_halves() {
    let mut rng = Rng::new(12);
    let net = plain_net(&mut rng);
    let data = random_dataset(2000, [3, 6, 6], 3, &mut rng);
    let first: Vec<usize> = (0..1000).collect();
    let second: Vec<usize> = (1000..2000).collect();
    let a = gradient_variance(&per_example_gradients(&net, &data, &first).unwrap());
    let b = gradient_variance(&per_example_gradients(&net, &data, &second).unwrap());
    assert!((a - b).abs() <= 0.05 * a.max(b), "{a} vs {b}");
}
