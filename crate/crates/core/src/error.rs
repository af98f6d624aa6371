use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{malformed} of {total} lines in {path} are malformed (first error at line {first_line}: {first_error})")]
    TooManyMalformed {
        path: PathBuf,
        malformed: usize,
        total: usize,
        first_line: usize,
        first_error: String,
    },

    #[error("invalid window: start {start} is after end {end}")]
    InvertedWindow { start: chrono::NaiveDate, end: chrono::NaiveDate },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected} columns, got {actual}")]
    ColumnMismatch { expected: usize, actual: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage `{stage}` requires stage `{requires}` to have run first ({detail})")]
    MissingStage {
        stage: &'static str,
        requires: &'static str,
        detail: String,
    },

    #[error("output directory {dir} holds artifacts from config {found}, current config is {expected}")]
    MixedConfig {
        dir: PathBuf,
        found: String,
        expected: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
