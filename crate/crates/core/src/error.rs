use std::path::PathBuf;

use dtaf_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV at row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("row {row}, column {column} ({name}): cannot parse {value:?} as a number")]
    Parse {
        row: usize,
        column: usize,
        name: String,
        value: String,
    },
    #[error("row {row} has {found} cells, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("dataset has no {0}")]
    Empty(&'static str),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("{split} split has {available} rows but a window needs {required}")]
    Window {
        split: &'static str,
        required: usize,
        available: usize,
    },
}

#[derive(Debug, Error)]
pub enum DtafError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss in epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DtafError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DtafError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input (configuration, data, checkpoint
    /// mismatch) rather than by a failing computation.
    pub fn is_user_error(&self) -> bool {
        match self {
            DtafError::Data(_) | DtafError::Config(_) | DtafError::Checkpoint(_) => true,
            DtafError::Io { .. } => true,
            DtafError::Tensor(TensorError::Config(_)) => true,
            DtafError::Tensor(_) | DtafError::NonFinite { .. } => false,
        }
    }
}

pub type Result<T, E = DtafError> = std::result::Result<T, E>;
