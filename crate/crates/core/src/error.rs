use std::path::PathBuf;

use thiserror::Error;

use crate::kernel::TreePath;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("path {path} does not resolve to a node of {expr}")]
    Path { path: TreePath, expr: String },

    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("parameter out of range at byte {position}: {message}")]
    ParameterRange { position: usize, message: String },

    #[error("covariance is not positive definite after jitter escalation (kernel {kernel})")]
    Numerical { kernel: String },

    #[error("all particle weights are degenerate")]
    DegenerateWeights,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("{path}: row {row}: {message}")]
    Data {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("stale model: data hash {found} does not match model hash {expected}")]
    StaleModel { expected: String, found: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
