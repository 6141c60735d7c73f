use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("non-finite value at line {line}, column {column}")]
    NonFinite { line: usize, column: usize },

    #[error("dataset has {0} rows; at least 2 are required")]
    TooFewRows(usize),

    #[error("only one class present")]
    SingleClass,

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),

    #[error("kernel produced a non-finite value at ({row}, {col})")]
    KernelOverflow { row: usize, col: usize },

    #[error("degenerate kernel: centered trace/n = {scale:e}")]
    DegenerateKernel { scale: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("K-space set is missing a class: n_pos = {n_pos}, n_neg = {n_neg}")]
    MissingKClass { n_pos: usize, n_neg: usize },

    #[error("non-finite weight vector at step {step}")]
    NonFiniteIterate { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("every candidate failed: {0}")]
    AllCandidatesFailed(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
