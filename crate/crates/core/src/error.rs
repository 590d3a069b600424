use std::path::PathBuf;

use thiserror::Error;

use crate::training::RunLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("data error at cell ({row}, {col}): {message}")]
    Data {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("leakage guard: {0}")]
    Leakage(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training {
        epoch: usize,
        message: String,
        log: Box<RunLog>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(what: &str, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::Shape(format!("{what}: expected {expected:?}, got {got:?}"))
    }
}
