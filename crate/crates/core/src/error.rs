use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("loss function is not deterministic: {first} != {second}")]
    Consistency { first: f64, second: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("ingestion error in table `{table}`: {message}")]
    Ingestion { table: String, message: String },

    #[error("integrity error in table `{table}`: duplicate primary key `{key}`")]
    Integrity { table: String, key: String },

    #[error("timestamp {0} is outside the supported range (years 1677..=2262)")]
    Range(i64),

    #[error("node of type `{0}` has no feature columns")]
    EmptyNode(String),

    #[error("temporal leak: {0}")]
    TemporalLeak(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Training { step: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
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

    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Process exit code for the CLI: 2 for configuration and schema
    /// problems, 3 for numerical failures at runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Training { .. }
            | Error::Consistency { .. }
            | Error::Metric(_)
            | Error::TemporalLeak(_)
            | Error::Range(_)
            | Error::Dimension { .. } => 3,
            _ => 2,
        }
    }
}
