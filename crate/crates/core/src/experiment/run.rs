use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::manifest::ExperimentManifest;
use super::results::{read_measures, write_measures, write_report, MeasureDiagnostics};
use super::*;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::eval::{build_report, EvalModel, EvalReport};
use crate::measures::compute_all;
use crate::model::HyperConfig;
use crate::train::train_model;

/// A grid point whose training failed outright.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub index: usize,
    pub config: HyperConfig,
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Process only grid points below this index and skip the report, as
    /// if the run had been interrupted.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub trained: usize,
    pub reused: usize,
    pub failed: usize,
    pub report: Option<EvalReport>,
}

/// Paths of one results directory.
#[derive(Clone, Debug)]
pub struct ResultsDir {
    pub root: PathBuf,
}

impl ResultsDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResultsDir { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn checkpoint(&self, i: usize) -> PathBuf {
        self.root.join(CHECKPOINT_DIR).join(format!("model-{i:04}.ckpt"))
    }

    pub fn failure(&self, i: usize) -> PathBuf {
        self.root.join(CHECKPOINT_DIR).join(format!("model-{i:04}.failed.json"))
    }

    pub fn measures(&self, i: usize) -> PathBuf {
        self.root.join(MEASURES_DIR).join(format!("model-{i:04}.csv"))
    }

    pub fn diagnostics(&self, i: usize) -> PathBuf {
        self.root.join(MEASURES_DIR).join(format!("model-{i:04}.json"))
    }

    fn create(&self) -> Result<()> {
        for d in [self.root.clone(), self.root.join(CHECKPOINT_DIR), self.root.join(MEASURES_DIR)] {
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(())
    }
}

/// Record the manifest in a fresh directory, or check it matches the one
/// already there.
fn claim(dir: &ResultsDir, manifest: &ExperimentManifest) -> Result<()> {
    let path = dir.manifest();
    if path.exists() {
        let existing = ExperimentManifest::load(&path)?;
        let (expected, found) = (manifest.hash(), existing.hash());
        if expected != found {
            return Err(Error::ManifestMismatch { path, expected, found });
        }
        return Ok(());
    }
    atomic_write(&path, manifest.to_toml()?.as_bytes())
}

enum Outcome {
    Trained,
    Reused,
    Failed,
}

fn existing_checkpoint(dir: &ResultsDir, i: usize, hash: &str) -> Result<Option<Checkpoint>> {
    let path = dir.checkpoint(i);
    if !path.exists() {
        return Ok(None);
    }
    match Checkpoint::load(&path) {
        Ok(c) if c.manifest_hash == hash && c.index == i => Ok(Some(c)),
        Ok(c) => Err(Error::ManifestMismatch {
            path,
            expected: hash.to_string(),
            found: c.manifest_hash,
        }),
        Err(e) => {
            warn!("retraining model {i}: {e}");
            Ok(None)
        }
    }
}

fn process(dir: &ResultsDir, manifest: &ExperimentManifest, hash: &str, data: &Split, i: usize) -> Result<Outcome> {
    if dir.failure(i).exists() {
        return Ok(Outcome::Failed);
    }
    let config = manifest.grid.config(i);
    let (ckpt, mut outcome) = match existing_checkpoint(dir, i, hash)? {
        Some(c) => (c, Outcome::Reused),
        None => match train_model(&config, data, manifest.model_seed(i), &manifest.training) {
            Ok(record) => {
                let c = Checkpoint {
                    manifest_hash: hash.to_string(),
                    index: i,
                    record,
                };
                c.save(&dir.checkpoint(i))?;
                info!(
                    "model {i}: {} steps, converged {}, gap {:.4}",
                    c.record.trace.total_steps, c.record.trace.converged, c.record.gap
                );
                (c, Outcome::Trained)
            }
            Err(e @ (Error::TrainingFailed(_) | Error::InvalidArchitecture(_))) => {
                warn!("model {i} failed: {e}");
                let f = FailureRecord {
                    index: i,
                    config,
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                };
                let json = serde_json::to_string_pretty(&f).expect("failure serializes");
                atomic_write(&dir.failure(i), json.as_bytes())?;
                return Ok(Outcome::Failed);
            }
            Err(e) => return Err(e),
        },
    };
    if ckpt.record.trace.converged && read_measures(&dir.measures(i)).is_err() {
        let (mv, diag) = compute_all(&ckpt.record, &data.train, &manifest.measures, manifest.measure_seed(i))?;
        let json = serde_json::to_string_pretty(&MeasureDiagnostics::from(&diag)).expect("diagnostics serialize");
        atomic_write(&dir.diagnostics(i), json.as_bytes())?;
        write_measures(&dir.measures(i), &mv)?;
        outcome = Outcome::Trained;
    }
    Ok(outcome)
}

/// Train and measure every grid point, then assemble the reports. Existing
/// valid checkpoints and measure files are reused.
pub fn run_grid(manifest: &ExperimentManifest, options: &RunOptions) -> Result<RunSummary> {
    manifest.validate()?;
    let dir = ResultsDir::new(&manifest.output_dir);
    dir.create()?;
    claim(&dir, manifest)?;
    let hash = manifest.hash();
    let data = manifest.load_dataset()?;
    let total = manifest.grid.len();
    let upto = options.stop_after.map_or(total, |k| k.min(total));
    info!("{}: {upto} of {total} grid points, {} threads", manifest.name, manifest.threads());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(manifest.threads())
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let outcomes: Vec<Result<Outcome>> =
        pool.install(|| (0..upto).into_par_iter().map(|i| process(&dir, manifest, &hash, &data, i)).collect());

    let mut summary = RunSummary::default();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(Outcome::Trained) => summary.trained += 1,
            Ok(Outcome::Reused) => summary.reused += 1,
            Ok(Outcome::Failed) => summary.failed += 1,
            Err(e @ Error::ManifestMismatch { .. }) => return Err(e),
            Err(e) => {
                warn!("model {i}: {e}");
                summary.failed += 1;
            }
        }
    }
    if options.stop_after.is_none() {
        match evaluate_results(&manifest.output_dir) {
            Ok(r) => summary.report = Some(r),
            Err(e @ Error::InsufficientModels { .. }) => warn!("no report: {e}"),
            Err(e) => return Err(e),
        }
    }
    Ok(summary)
}

/// Status of one grid point read back from disk.
struct Row {
    index: usize,
    config: HyperConfig,
    seed: u64,
    status: &'static str,
    header: Option<super::checkpoint::CheckpointHeader>,
}

fn fmt_f(v: f64) -> String {
    v.to_string()
}

/// Rebuild `models.csv`, `measures.csv` and the reports from the artifacts
/// in `root`.
pub fn evaluate_results(root: &Path) -> Result<EvalReport> {
    let dir = ResultsDir::new(root);
    let manifest = ExperimentManifest::load(&dir.manifest())?;
    let hash = manifest.hash();
    let mut rows = Vec::new();
    let mut models = Vec::new();
    let mut measures_csv = String::from("model,measure,value,defined,reason\n");
    for i in 0..manifest.grid.len() {
        let config = manifest.grid.config(i);
        let levels = manifest.grid.level_config(i);
        let mut row = Row {
            index: i,
            config,
            seed: manifest.model_seed(i),
            status: "missing",
            header: None,
        };
        let path = dir.checkpoint(i);
        if dir.failure(i).exists() {
            row.status = "failed";
        } else if path.exists() {
            let h = Checkpoint::load_header(&path)?;
            if h.manifest_hash != hash {
                return Err(Error::ManifestMismatch {
                    path,
                    expected: hash,
                    found: h.manifest_hash,
                });
            }
            row.status = if h.converged { "converged" } else { "not-converged" };
            if h.converged {
                let mv = read_measures(&dir.measures(i))?;
                for line in super::results::measure_rows(&mv).lines().skip(1) {
                    writeln!(measures_csv, "{i},{line}").unwrap();
                }
                models.push(EvalModel {
                    config: levels,
                    gap: h.gap,
                    converged: true,
                    measures: mv,
                });
            } else {
                models.push(EvalModel {
                    config: levels,
                    gap: h.gap,
                    converged: false,
                    measures: Default::default(),
                });
            }
            row.header = Some(h);
        }
        rows.push(row);
    }

    let mut models_csv = String::from(
        "model,batch_size,dropout,learning_rate,depth,optimizer,weight_decay,width,seed,status,total_steps,train_ce,train_error,test_error,gap\n",
    );
    for r in &rows {
        let c = &r.config;
        write!(
            models_csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.index,
            c.batch_size,
            c.dropout,
            c.learning_rate,
            c.depth,
            c.optimizer.name(),
            c.weight_decay,
            c.width,
            r.seed,
            r.status
        )
        .unwrap();
        match &r.header {
            Some(h) => writeln!(
                models_csv,
                ",{},{},{},{},{}",
                h.trace.total_steps,
                fmt_f(h.trace.final_train_ce),
                fmt_f(h.train_error),
                fmt_f(h.test_error),
                fmt_f(h.gap)
            )
            .unwrap(),
            None => writeln!(models_csv, ",,,,,").unwrap(),
        }
    }
    atomic_write(&root.join(MODELS_CSV), models_csv.as_bytes())?;
    atomic_write(&root.join(MEASURES_CSV), measures_csv.as_bytes())?;

    let report = build_report(&models, &manifest.report)?;
    write_report(root, &report)?;
    Ok(report)
}
