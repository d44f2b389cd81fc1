use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_cifar10_dir, synth_dataset, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::ReportOptions;
use crate::measures::MeasureConfig;
use crate::model::{HyperConfig, OptimizerKind};
use crate::tensor::Rng;
use crate::train::Schedule;

const DATA_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Synthetic(SynthSpec),
    #[serde(rename = "cifar10")]
    Cifar10 {
        /// Directory holding the binary batch files.
        dir: PathBuf,
        train_subset: Option<usize>,
        test_subset: Option<usize>,
        #[serde(default = "one")]
        downsample: usize,
    },
}

fn one() -> usize {
    1
}

/// Value sets of the seven hyperparameter axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub batch_size: Vec<usize>,
    pub dropout: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub depth: Vec<usize>,
    pub optimizer: Vec<OptimizerKind>,
    pub weight_decay: Vec<f64>,
    pub width: Vec<usize>,
    /// Optimizer-specific values that replace `learning_rate` or
    /// `weight_decay` level by level. Models are trained with the replaced
    /// values but grouped by level, so the shared lists act as level labels.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_optimizer: BTreeMap<OptimizerKind, OptimizerValues>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerValues {
    pub learning_rate: Option<Vec<f64>>,
    pub weight_decay: Option<Vec<f64>>,
}

impl GridSpec {
    fn sizes(&self) -> [usize; 7] {
        [
            self.batch_size.len(),
            self.dropout.len(),
            self.learning_rate.len(),
            self.depth.len(),
            self.optimizer.len(),
            self.weight_decay.len(),
            self.width.len(),
        ]
    }

    pub fn len(&self) -> usize {
        self.sizes().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-axis level indices of grid point `index` in mixed radix, width
    /// varying fastest.
    pub fn levels(&self, index: usize) -> [usize; 7] {
        let sizes = self.sizes();
        let mut digits = [0usize; 7];
        let mut rest = index;
        for a in (0..7).rev() {
            digits[a] = rest % sizes[a];
            rest /= sizes[a];
        }
        digits
    }

    /// Hyperparameters grid point `index` is trained with.
    pub fn config(&self, index: usize) -> HyperConfig {
        let mut c = self.level_config(index);
        let digits = self.levels(index);
        if let Some(o) = self.per_optimizer.get(&c.optimizer) {
            if let Some(lr) = &o.learning_rate {
                c.learning_rate = lr[digits[2]];
            }
            if let Some(wd) = &o.weight_decay {
                c.weight_decay = wd[digits[5]];
            }
        }
        c
    }

    /// Grid point `index` with the shared value lists only; this is the
    /// coordinate models are grouped by when evaluating.
    pub fn level_config(&self, index: usize) -> HyperConfig {
        let digits = self.levels(index);
        HyperConfig {
            batch_size: self.batch_size[digits[0]],
            dropout: self.dropout[digits[1]],
            learning_rate: self.learning_rate[digits[2]],
            depth: self.depth[digits[3]],
            optimizer: self.optimizer[digits[4]],
            weight_decay: self.weight_decay[digits[5]],
            width: self.width[digits[6]],
        }
    }

    pub fn configs(&self) -> Vec<HyperConfig> {
        (0..self.len()).map(|i| self.config(i)).collect()
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; defaults to the available cores.
    #[serde(default)]
    pub parallelism: Option<usize>,
    pub dataset: DatasetSpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub training: Schedule,
    #[serde(default)]
    pub measures: MeasureConfig,
    #[serde(default)]
    pub report: ReportOptions,
}

impl ExperimentManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: ExperimentManifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let names = ["batch_size", "dropout", "learning_rate", "depth", "optimizer", "weight_decay", "width"];
        for (name, n) in names.iter().zip(g.sizes()) {
            if n == 0 {
                return Err(Error::Manifest(format!("grid axis {name} is empty")));
            }
        }
        if g.batch_size.contains(&0) || g.depth.contains(&0) || g.width.contains(&0) {
            return Err(Error::Manifest("batch size, depth and width must be positive".into()));
        }
        if g.learning_rate.iter().any(|&v| !(v > 0.0)) || g.weight_decay.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Manifest("learning rates must be positive, weight decays nonnegative".into()));
        }
        for (kind, o) in &g.per_optimizer {
            for (name, values, shared) in [
                ("learning_rate", &o.learning_rate, &g.learning_rate),
                ("weight_decay", &o.weight_decay, &g.weight_decay),
            ] {
                if let Some(v) = values {
                    if v.len() != shared.len() {
                        return Err(Error::Manifest(format!(
                            "{} {name} needs {} values like the shared list",
                            kind.name(),
                            shared.len()
                        )));
                    }
                }
            }
            let positive = o.learning_rate.iter().flatten().all(|&v| v > 0.0);
            if !positive || o.weight_decay.iter().flatten().any(|&v| !(v >= 0.0)) {
                return Err(Error::Manifest("learning rates must be positive, weight decays nonnegative".into()));
            }
        }
        if g.dropout.iter().any(|d| !(0.0..1.0).contains(d)) {
            return Err(Error::Manifest("dropout must lie in [0, 1)".into()));
        }
        let t = &self.training;
        if t.max_steps == 0 || t.eval_every == 0 || t.loss_batches == 0 || !(t.ce_threshold > 0.0) {
            return Err(Error::Manifest(
                "training needs positive max_steps, eval_every, loss_batches and ce_threshold".into(),
            ));
        }
        if self.parallelism == Some(0) {
            return Err(Error::Manifest("parallelism must be positive".into()));
        }
        if let DatasetSpec::Cifar10 { downsample: 0, .. } = self.dataset {
            return Err(Error::Manifest("downsample must be positive".into()));
        }
        self.measures.validate().map_err(|e| Error::Manifest(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, ignoring where results go and how
    /// many threads produce them.
    pub fn hash(&self) -> String {
        let mut m = self.clone();
        m.output_dir = PathBuf::new();
        m.parallelism = None;
        // serde_json maps are sorted, so the encoding is canonical
        let value = serde_json::to_value(&m).expect("manifest serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn threads(&self) -> usize {
        self.parallelism
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn model_seed(&self, index: usize) -> u64 {
        Rng::derive_seed(self.seed, &[index as u64])
    }

    pub fn measure_seed(&self, index: usize) -> u64 {
        Rng::derive_seed(self.seed, &[index as u64, 1])
    }

    pub fn load_dataset(&self) -> Result<Split> {
        let seed = Rng::derive_seed(self.seed, &[DATA_STREAM]);
        match &self.dataset {
            DatasetSpec::Synthetic(spec) => synth_dataset(spec, seed),
            DatasetSpec::Cifar10 {
                dir,
                train_subset,
                test_subset,
                downsample,
            } => load_cifar10_dir(dir, *train_subset, *test_subset, *downsample, seed),
        }
    }
}
