use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the prediction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("window size mismatch: expected {expected}, got {actual}")]
    WindowSizeMismatch { expected: usize, actual: usize },

    #[error("degenerate channel: min {min} equals max {max}")]
    DegenerateChannel { min: f64, max: f64 },

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("missing normalization stats for channel {0}")]
    MissingStats(usize),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("checkpoint digest mismatch")]
    DigestMismatch,

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (divergence) rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
