use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: empty file")]
    EmptyFile { path: PathBuf },

    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow { path: PathBuf, line: u64, reason: String },

    #[error("bar invariant violated on {date}: {invariant}")]
    BarInvariant { date: chrono::NaiveDate, invariant: &'static str },

    #[error("duplicate date {0} in series")]
    DuplicateDate(chrono::NaiveDate),

    #[error("empty series")]
    EmptySeries,

    #[error("insufficient history: need {needed} bars up to index {index}, have {available}")]
    InsufficientHistory { needed: usize, index: usize, available: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("portfolio wiped out at step {step} (growth factor {factor})")]
    Wipeout { step: usize, factor: f64 },

    #[error("rebalance infeasible: transaction costs drive value to {value}")]
    InfeasibleRebalance { value: f64 },

    #[error("backward requires a scalar root, got shape {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("singular covariance matrix after ridge regularization")]
    SingularCovariance,

    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
