use thiserror::Error;

/// Errors raised by the laboratory core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value iteration did not converge (gamma = {gamma}, residual = {residual:e}) after {sweeps} sweeps")]
    NonConvergence { gamma: f64, residual: f64, sweeps: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at index {index}: {what}")]
    NonFinite { what: String, index: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("data integrity: {0}")]
    Integrity(String),

    #[error("checkpoint for step {requested} not found; available steps: {available:?}")]
    MissingCheckpoint { requested: u64, available: Vec<u64> },

    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            msg: err.to_string(),
        }
    }
}
