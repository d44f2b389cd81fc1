use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gencomplex::experiment::{
    evaluate_results, measure_key_values, read_report, render_table, run_grid, Checkpoint,
    ExperimentManifest, Format, RunOptions, Table, MANIFEST_FILE,
};
use gencomplex::measures::compute_all;
use gencomplex::Error;
use log::info;

/// Environment variable that overrides the manifest's output directory.
const OUTPUT_ENV: &str = "GENCOMPLEX_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "gencomplex", version, about = "Train model grids and score complexity measures")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and measure every grid point, then write the reports.
    TrainGrid {
        #[arg(long)]
        manifest: PathBuf,
        /// Overrides both the manifest and $GENCOMPLEX_OUTPUT_DIR.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Stop after the first N grid points without writing reports.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Compute the measure catalog for one checkpoint and print it as CSV.
    Measure {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the manifest of the results directory holding the checkpoint.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Rebuild models.csv, measures.csv and the reports of a results directory.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
    },
    /// Print a report table.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        #[arg(long, value_enum, default_value_t = TableArg::Kendall)]
        table: TableArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Md,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    Kendall,
    Cmi,
}

/// Whether the error comes from the caller's inputs rather than a bug or a
/// numerical breakdown.
fn is_user_error(e: &Error) -> bool {
    !matches!(
        e,
        Error::TrainingFailed(_) | Error::UnsupportedTopology(_) | Error::InvalidArchitecture(_)
    )
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let json = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{json}");
    ExitCode::from(code)
}

fn default_manifest(checkpoint: &Path) -> PathBuf {
    checkpoint
        .parent()
        .and_then(Path::parent)
        .unwrap_or(Path::new("."))
        .join(MANIFEST_FILE)
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::TrainGrid {
            manifest,
            output_dir,
            stop_after,
        } => {
            let mut m = ExperimentManifest::load(&manifest)?;
            if let Some(dir) = output_dir.or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from)) {
                m.output_dir = dir;
            }
            let s = run_grid(&m, &RunOptions { stop_after })?;
            info!("trained {}, reused {}, failed {}", s.trained, s.reused, s.failed);
            if let Some(r) = s.report {
                info!("report over {} converged models in {}", r.converged, m.output_dir.display());
            }
        }
        Command::Measure { checkpoint, manifest } => {
            let mpath = manifest.unwrap_or_else(|| default_manifest(&checkpoint));
            let m = ExperimentManifest::load(&mpath)?;
            let ck = Checkpoint::load(&checkpoint)?;
            if ck.manifest_hash != m.hash() {
                return Err(Error::ManifestMismatch {
                    path: checkpoint,
                    expected: m.hash(),
                    found: ck.manifest_hash,
                });
            }
            let data = m.load_dataset()?;
            let (mv, _) = compute_all(&ck.record, &data.train, &m.measures, m.measure_seed(ck.index))?;
            print!("{}", measure_key_values(&mv));
        }
        Command::Evaluate { results } => {
            let r = evaluate_results(&results)?;
            info!("{} converged, {} excluded", r.converged, r.excluded);
        }
        Command::Report {
            results,
            format,
            table,
        } => {
            let r = read_report(&results)?;
            let format = match format {
                FormatArg::Csv => Format::Csv,
                FormatArg::Md => Format::Markdown,
            };
            let table = match table {
                TableArg::Kendall => Table::Kendall,
                TableArg::Cmi => Table::Cmi,
            };
            print!("{}", render_table(&r, table, format));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 1),
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), if is_user_error(&e) { 1 } else { 2 }),
    }
}
