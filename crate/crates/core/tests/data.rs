use gencomplex::data::*;
use gencomplex::tensor::Tensor;

/// Independent writer for the CIFAR-10 binary layout.
fn cifar_bytes(records: &[(u8, [u8; 3])]) -> Vec<u8> {
    let mut out = Vec::new();
    for &(label, rgb) in records {
        out.push(label);
        for plane in rgb {
            for p in 0..1024u32 {
                out.push(plane.wrapping_add((p % 7) as u8));
            }
        }
    }
    out
}

#[test]
fn cifar_record_decodes() {
    let bytes = cifar_bytes(&[(3, [10, 100, 200]), (9, [0, 0, 255])]);
    assert_eq!(bytes.len(), 2 * 3073);
    let d = decode_cifar10(&bytes).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.labels(), &[3, 9]);
    assert_eq!(d.image_shape(), [3, 32, 32]);
    let px = d.images().data();
    assert_eq!(px[0], 10.0 / 255.0);
    assert_eq!(px[1], 11.0 / 255.0);
    assert_eq!(px[1024], 100.0 / 255.0);
    assert_eq!(px[2048 + 6], 206.0 / 255.0);
    // second record, blue plane wraps 255 + 1 to 0
    assert_eq!(px[3072 + 2048], 1.0);
    assert_eq!(px[3072 + 2048 + 1], 0.0);
}

#[test]
fn full_batch_file_arithmetic() {
    let recs: Vec<(u8, [u8; 3])> = (0..10_000).map(|i| ((i % 10) as u8, [1, 2, 3])).collect();
    let bytes = cifar_bytes(&recs);
    assert_eq!(bytes.len(), 10_000 * 3073);
    assert_eq!(decode_cifar10(&bytes).unwrap().len(), 10_000);
}

#[test]
fn corrupt_cifar_files() {
    let mut bytes = cifar_bytes(&[(1, [0, 0, 0])]);
    bytes.pop();
    assert_eq!(decode_cifar10(&bytes).unwrap_err().kind(), "corrupt-dataset");
    let bad = cifar_bytes(&[(10, [0, 0, 0])]);
    assert_eq!(decode_cifar10(&bad).unwrap_err().kind(), "corrupt-dataset");
}

#[test]
fn cifar_directory_loading() {
    let dir = tempfile::tempdir().unwrap();
    let train: Vec<(u8, [u8; 3])> = (0..20).map(|i| ((i % 10) as u8, [i as u8, 0, 0])).collect();
    std::fs::write(dir.path().join("data_batch_1.bin"), cifar_bytes(&train)).unwrap();
    std::fs::write(dir.path().join("data_batch_2.bin"), cifar_bytes(&train[..5])).unwrap();
    std::fs::write(dir.path().join("test_batch.bin"), cifar_bytes(&train[..10])).unwrap();
    let split = load_cifar10_dir(dir.path(), Some(12), None, 2, 3).unwrap();
    assert_eq!(split.train.len(), 12);
    assert_eq!(split.test.len(), 10);
    assert_eq!(split.train.image_shape(), [3, 16, 16]);
    let again = load_cifar10_dir(dir.path(), Some(12), None, 2, 3).unwrap();
    assert_eq!(split.train, again.train);
    assert!(load_cifar10_dir(&dir.path().join("missing"), None, None, 1, 0).is_err());
}

#[test]
fn downsampling_averages_blocks() {
    let c = Tensor::full(&[2, 3, 32, 32], 0.25f32);
    let d = Dataset::new(c, vec![0, 1], 10).unwrap().downsample(2).unwrap();
    assert_eq!(d.image_shape(), [3, 16, 16]);
    assert!(d.images().data().iter().all(|&v| v == 0.25));
    let ramp = Tensor::from_fn(&[1, 1, 2, 2], |i| i as f32);
    let small = Dataset::new(ramp, vec![0], 2).unwrap().downsample(2).unwrap();
    assert_eq!(small.images().data(), &[1.5]);
}

fn spec() -> SynthSpec {
    SynthSpec {
        num_classes: 10,
        train_per_class: 50,
        test_per_class: 50,
        image_size: 8,
        channels: 3,
        blobs: 3,
        noise: 0.5,
        label_noise: 0.0,
    }
}

#[test]
fn synthetic_is_balanced_and_seeded() {
    let a = synth_dataset(&spec(), 1).unwrap();
    let mut counts = [0; 10];
    for &y in a.train.labels() {
        counts[y] += 1;
    }
    assert_eq!(counts, [50; 10]);
    assert_eq!(a.test.len(), 500);
    let b = synth_dataset(&spec(), 1).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);
    assert_ne!(synth_dataset(&spec(), 2).unwrap().train, a.train);
}

/// Softmax regression trained by full-batch gradient descent.
fn linear_probe_accuracy(split: &Split) -> f64 {
    let d: usize = split.train.image_shape().iter().product();
    let k = split.train.num_classes();
    let mut w = vec![0.0f64; k * (d + 1)];
    let feats = |ds: &Dataset, i: usize| -> Vec<f64> {
        let row = &ds.images().data()[i * d..(i + 1) * d];
        row.iter().map(|&v| v as f64).chain([1.0]).collect()
    };
    let xs: Vec<Vec<f64>> = (0..split.train.len()).map(|i| feats(&split.train, i)).collect();
    let logits = |w: &[f64], x: &[f64]| -> Vec<f64> {
        (0..k).map(|c| w[c * (d + 1)..(c + 1) * (d + 1)].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    };
    for _ in 0..300 {
        let mut grad = vec![0.0; w.len()];
        for (x, &y) in xs.iter().zip(split.train.labels()) {
            let z = logits(&w, x);
            let mx = z.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let g = e[c] / s - f64::from(c == y);
                for (j, xv) in x.iter().enumerate() {
                    grad[c * (d + 1) + j] += g * xv;
                }
            }
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= 0.05 * g / xs.len() as f64;
        }
    }
    let correct = (0..split.test.len())
        .filter(|&i| {
            let z = logits(&w, &feats(&split.test, i));
            let arg = (0..k).max_by(|&a, &b| z[a].total_cmp(&z[b])).unwrap();
            arg == split.test.labels()[i]
        })
        .count();
    correct as f64 / split.test.len() as f64
}

#[test]
fn synthetic_data_is_linearly_learnable() {
    let acc = linear_probe_accuracy(&synth_dataset(&spec(), 5).unwrap());
    assert!(acc > 0.8, "probe accuracy {acc}");
}

#[test]
fn label_noise_only_touches_training_labels() {
    let mut s = spec();
    s.label_noise = 0.5;
    let split = synth_dataset(&s, 4).unwrap();
    let flipped = split.train.labels().iter().enumerate().filter(|(i, &y)| y != i % 10).count();
    assert!(flipped > 150 && flipped < 300, "{flipped}");
    assert!(split.test.labels().iter().enumerate().all(|(i, &y)| y == i % 10));
}

#[test]
fn subsets_and_norms() {
    let split = synth_dataset(&spec(), 6).unwrap();
    let sub = split.train.subset(&[3, 1]);
    assert_eq!(sub.labels(), &[3, 1]);
    let want = split.train.images().gather_outer(&[3, 1]);
    assert_eq!(sub.images(), &want);
    let norm = (0..sub.len())
        .map(|i| sub.images().slice_outer(i, i + 1).sq_norm().sqrt())
        .fold(0.0, f64::max);
    assert!((sub.max_input_norm() - norm).abs() < 1e-9);
}
