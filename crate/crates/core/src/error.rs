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

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("{file}: header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch {
        file: String,
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("{file}: row {row}, column {column:?}: unknown modality {label:?}")]
    UnknownModality {
        file: String,
        row: usize,
        column: String,
        label: String,
    },

    #[error("{file}: row {row}, column {column:?}: malformed number {text:?}")]
    MalformedNumber {
        file: String,
        row: usize,
        column: String,
        text: String,
    },

    #[error("{file}: row {row}, column {column:?}: missing value not allowed here")]
    MissingValue { file: String, row: usize, column: String },

    #[error("{file}: row {row} has {found} fields, expected {expected}")]
    RowWidth {
        file: String,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row count mismatch: {left} continuous rows vs {right} categorical rows")]
    RowCountMismatch { left: usize, right: usize },

    #[error("row {row}: no observed continuous entries")]
    EmptyRow { row: usize },

    #[error("row {row}: kept observed entries sum to zero, cannot renormalize")]
    ZeroComposition { row: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("class {class} has no training rows")]
    AbsentClass { class: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
