//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A telemetry file could not be parsed. `line` is 1-based and counts the header.
    #[error("{file}:{line}: {message}")]
    Load {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no profiles found in {0}")]
    NoProfiles(PathBuf),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular normal matrix; use a regularized fit (fit_sgd with alpha > 0)")]
    Singular,

    #[error("optimization diverged at epoch {epoch} (learning rate {learning_rate})")]
    Divergence { epoch: usize, learning_rate: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("cache does not belong to this model state")]
    StaleCache,

    #[error("not a thermoguard model")]
    BadMagic,

    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated model payload: {0}")]
    Truncated(&'static str),

    #[error("corrupt model container: {0}")]
    Corrupt(String),

    #[error("degenerate alert threshold for {target}: {threshold}")]
    DegenerateThreshold { target: String, threshold: f64 },

    #[error("all {0} search trials failed")]
    AllTrialsFailed(usize),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
