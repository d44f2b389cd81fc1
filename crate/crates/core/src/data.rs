//! Labelled image sets: the in-memory type, a synthetic generator and the
//! CIFAR-10 binary reader.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Images `[m, c, h, w]` with one label each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::invalid("images must be [m, c, h, w]"));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range")));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.images.gather_outer(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.batch(indices);
        Dataset {
            images,
            labels,
            num_classes: self.num_classes,
        }
    }

    /// Largest ℓ₂ norm of any single input.
    pub fn max_input_norm(&self) -> f64 {
        let inner: usize = self.image_shape().iter().product();
        self.images
            .data()
            .chunks(inner)
            .map(|x| x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Average-pool every image by `factor` in both spatial directions.
    pub fn downsample(&self, factor: usize) -> Result<Dataset> {
        if factor <= 1 {
            return Ok(self.clone());
        }
        let [c, h, w] = self.image_shape();
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::invalid(format!(
                "cannot downsample {h}x{w} by {factor}"
            )));
        }
        let (oh, ow) = (h / factor, w / factor);
        let area = (factor * factor) as f64;
        let src = self.images.data();
        let mut out = Vec::with_capacity(self.len() * c * oh * ow);
        for plane in src.chunks(h * w) {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0f64;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += plane[(y * factor + dy) * w + x * factor + dx] as f64;
                        }
                    }
                    out.push((acc / area) as f32);
                }
            }
        }
        Dataset::new(
            Tensor::new(vec![self.len(), c, oh, ow], out)?,
            self.labels.clone(),
            self.num_classes,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

/// Class-conditional Gaussian-blob images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Blobs per class prototype.
    #[serde(default = "default_blobs")]
    pub blobs: usize,
    /// Standard deviation of the per-pixel noise added to each prototype.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Fraction of training labels replaced by a uniformly drawn class.
    #[serde(default)]
    pub label_noise: f64,
}

fn default_channels() -> usize {
    3
}
fn default_blobs() -> usize {
    3
}
fn default_noise() -> f64 {
    0.5
}

/// Each class gets a prototype made of a few Gaussian bumps with random
/// centre, width and per-channel sign; examples are the prototype plus i.i.d.
/// Gaussian pixel noise. Classes are balanced and examples are interleaved by
/// class.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<Split> {
    if spec.num_classes < 2 || spec.image_size == 0 || spec.channels == 0 {
        return Err(Error::invalid("synthetic data needs ≥ 2 classes and nonempty images"));
    }
    if spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::invalid("synthetic data needs examples in both splits"));
    }
    let rng = Rng::new(seed);
    let mut proto_rng = rng.fork(0);
    let (n, c) = (spec.image_size, spec.channels);
    let plane = n * n;
    let prototypes: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            let mut img = vec![0.0; c * plane];
            for _ in 0..spec.blobs {
                let (cy, cx) = (proto_rng.uniform_in(0.0, n as f64), proto_rng.uniform_in(0.0, n as f64));
                let width = proto_rng.uniform_in(0.15, 0.35) * n as f64;
                let amps: Vec<f64> = (0..c).map(|_| proto_rng.normal()).collect();
                for y in 0..n {
                    for x in 0..n {
                        let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                        let v = (-d2 / (2.0 * width * width)).exp();
                        for (ch, a) in amps.iter().enumerate() {
                            img[ch * plane + y * n + x] += a * v;
                        }
                    }
                }
            }
            img
        })
        .collect();
    let make = |per_class: usize, rng: &mut Rng, label_noise: f64| -> Result<Dataset> {
        let m = per_class * spec.num_classes;
        let mut data = Vec::with_capacity(m * c * plane);
        let mut labels = Vec::with_capacity(m);
        for i in 0..m {
            let y = i % spec.num_classes;
            data.extend(
                prototypes[y]
                    .iter()
                    .map(|&p| (p + spec.noise * rng.normal()) as f32),
            );
            let label = if label_noise > 0.0 && rng.uniform() < label_noise {
                rng.below(spec.num_classes)
            } else {
                y
            };
            labels.push(label);
        }
        Dataset::new(Tensor::new(vec![m, c, n, n], data)?, labels, spec.num_classes)
    };
    Ok(Split {
        train: make(spec.train_per_class, &mut rng.fork(1), spec.label_noise)?,
        test: make(spec.test_per_class, &mut rng.fork(2), 0.0)?,
    })
}

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Decode one CIFAR-10 binary batch file: records of one label byte then
/// three 32×32 planes (R, G, B), scaled to `[0, 1]`.
pub fn load_cifar10_binary(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cifar10(&bytes).map_err(|e| match e {
        Error::CorruptDataset(msg) => Error::CorruptDataset(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn decode_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::CorruptDataset(format!(
            "{} bytes is not a whole number of {CIFAR_RECORD}-byte records",
            bytes.len()
        )));
    }
    let m = bytes.len() / CIFAR_RECORD;
    let mut data = Vec::with_capacity(m * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(m);
    for (i, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::CorruptDataset(format!("record {i} has label {}", rec[0])));
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(Tensor::new(vec![m, 3, 32, 32], data)?, labels, 10)
}

fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for p in &parts {
        labels.extend_from_slice(p.labels());
        data.extend_from_slice(p.images().data());
    }
    let shape = parts[0].image_shape();
    Dataset::new(
        Tensor::new(vec![labels.len(), shape[0], shape[1], shape[2]], data)?,
        labels,
        10,
    )
}

fn seeded_subset(d: &Dataset, size: Option<usize>, rng: &mut Rng) -> Dataset {
    match size {
        Some(k) if k < d.len() => {
            let mut idx = rng.sample_indices(d.len(), k);
            idx.sort_unstable();
            d.subset(&idx)
        }
        _ => d.clone(),
    }
}

/// `data_batch_{1..5}.bin` and `test_batch.bin` from `dir`, optionally
/// subset (deterministically by seed) and area-downsampled.
pub fn load_cifar10_dir(
    dir: &Path,
    train_subset: Option<usize>,
    test_subset: Option<usize>,
    downsample: usize,
    seed: u64,
) -> Result<Split> {
    let train_files: Vec<_> = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .filter(|p| p.exists())
        .collect();
    if train_files.is_empty() {
        return Err(Error::CorruptDataset(format!(
            "no data_batch_*.bin files in {}",
            dir.display()
        )));
    }
    let train = concat(
        train_files
            .iter()
            .map(|p| load_cifar10_binary(p))
            .collect::<Result<_>>()?,
    )?;
    let test = load_cifar10_binary(&dir.join("test_batch.bin"))?;
    let rng = Rng::new(seed);
    Ok(Split {
        train: seeded_subset(&train, train_subset, &mut rng.fork(0)).downsample(downsample)?,
        test: seeded_subset(&test, test_subset, &mut rng.fork(1)).downsample(downsample)?,
    })
}
