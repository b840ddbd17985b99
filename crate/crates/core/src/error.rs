use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("instance {uuid} references unknown trial {trial_id}")]
    UnknownTrial { uuid: String, trial_id: String },

    #[error("trial {trial_id} has an empty {section} section")]
    EmptySection { trial_id: String, section: String },

    #[error("hypothesis needs {needed} positions but the maximum length is {max_len}")]
    Unencodable { needed: usize, max_len: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("sequence length {len} exceeds the {max} available positions")]
    Length { len: usize, max: usize },

    #[error("parameter import failed for array `{array}`: {reason}")]
    Import { array: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("undefined score: {0}")]
    UndefinedScore(String),

    #[error("prediction sets are misaligned at key {key}")]
    Alignment { key: String },

    #[error("scorer failed on instance {uuid}: {message}")]
    Scorer { uuid: String, message: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
