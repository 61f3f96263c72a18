use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("series too short: {rows} time points, need at least {needed} for lag {lag}")]
    SeriesTooShort { rows: usize, needed: usize, lag: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("group {0} has no subjects")]
    EmptyGroup(usize),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("numerical breakdown in block {block}: {detail}")]
    NumericalBreakdown { block: String, detail: String },

    #[error("ELBO decreased after updating {block}: {before} -> {after}")]
    ElboDecrease { block: String, before: f64, after: f64 },

    #[error("subject {subject}: {attempts} consecutive non-stationary coefficient draws")]
    StationarityRejections { subject: usize, attempts: usize },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Factorization(_)
            | Error::NumericalBreakdown { .. }
            | Error::ElboDecrease { .. }
            | Error::StationarityRejections { .. } => 2,
            _ => 1,
        }
    }
}
