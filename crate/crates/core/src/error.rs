use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("distance matrix: {0}")]
    Matrix(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unknown bag `{0}`")]
    UnknownBag(String),

    #[error("index {index} out of range for bag `{bag}` with {len} instances")]
    InstanceIndex { bag: String, index: usize, len: usize },

    #[error("training set: {0}")]
    Training(String),

    #[error("nu = {nu} is infeasible (must be <= {max})")]
    InfeasibleNu { nu: f64, max: f64 },

    #[error("no trained model")]
    NoModel,

    #[error("duplicate: {0}")]
    Duplicate(String),

    #[error("session file: {0}")]
    Session(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
