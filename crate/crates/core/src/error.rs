use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("cannot calibrate: {0}")]
    CannotCalibrate(String),

    #[error("unsupported model file version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("{path}: missing or invalid header: {reason}")]
    MissingHeader { path: PathBuf, reason: String },

    #[error("{path}: line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        path: PathBuf,
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("{path}: line {line}: non-numeric value {value:?} in column {column}")]
    NonNumeric {
        path: PathBuf,
        line: u64,
        column: usize,
        value: String,
    },

    #[error("{path}: line {line}: label {label} outside [0, {num_classes})")]
    LabelOutOfRange {
        path: PathBuf,
        line: u64,
        label: String,
        num_classes: usize,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Failures caused by NaN/inf arithmetic rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
