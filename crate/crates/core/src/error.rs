use std::path::PathBuf;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),
    #[error("training failed: {0}")]
    TrainingFailed(String),
    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),
    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("manifest hash mismatch in {path}: expected {expected}, found {found}")]
    ManifestMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("need at least {needed} converged models, found {found}")]
    InsufficientModels { needed: usize, found: usize },
    #[error("malformed results file {path}: {reason}")]
    Results { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InvalidArchitecture(_) => "invalid-architecture",
            Error::UnsupportedTopology(_) => "unsupported-topology",
            Error::TrainingFailed(_) => "training-failed",
            Error::CorruptDataset(_) => "corrupt-dataset",
            Error::CorruptCheckpoint { .. } => "corrupt-checkpoint",
            Error::Manifest(_) => "invalid-manifest",
            Error::ManifestMismatch { .. } => "manifest-mismatch",
            Error::InsufficientModels { .. } => "insufficient-models",
            Error::Results { .. } => "malformed-results",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
