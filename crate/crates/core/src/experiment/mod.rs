//! Manifests, checkpoints, grid orchestration and result files.
//!
//! A results directory holds:
//!
//! ```text
//! manifest.toml
//! checkpoints/model-NNNN.ckpt         trained weights and trace
//! checkpoints/model-NNNN.failed.json  training failure, if any
//! measures/model-NNNN.csv             measure vector
//! measures/model-NNNN.json            search diagnostics
//! models.csv  measures.csv  eval_report.json  report_tau.csv  report_cmi.csv
//! ```

mod checkpoint;
mod manifest;
mod results;
mod run;

use std::io::Write;
use std::path::Path;

pub use checkpoint::{Checkpoint, CheckpointHeader, TensorEntry, MAGIC, VERSION};
pub use manifest::{DatasetSpec, ExperimentManifest, GridSpec, OptimizerValues};
pub use results::{
    measure_key_values, measure_rows, parse_measure_rows, read_measures, read_report, render_table,
    write_measures, write_report, Format, MeasureDiagnostics, Table,
};
pub use run::{evaluate_results, run_grid, FailureRecord, ResultsDir, RunOptions, RunSummary};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const MEASURES_DIR: &str = "measures";
pub const MODELS_CSV: &str = "models.csv";
pub const MEASURES_CSV: &str = "measures.csv";
pub const REPORT_JSON: &str = "eval_report.json";
pub const REPORT_TAU: &str = "report_tau.csv";
pub const REPORT_CMI: &str = "report_cmi.csv";

/// Write to a temporary file in the same directory, then rename over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
