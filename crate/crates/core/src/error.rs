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

    #[error("malformed line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("non-positive price at line {line}")]
    NonPositivePrice { line: usize },

    #[error("duplicate item_id {id:?} at lines {first} and {second}")]
    DuplicateItem {
        id: String,
        first: usize,
        second: usize,
    },

    #[error("unknown period tag {tag:?} at line {line}")]
    UnknownPeriod { tag: String, line: usize },

    #[error("session {session_id:?}: {message}")]
    InvalidSession { session_id: String, message: String },

    #[error("{0} session found where {1} sessions are required")]
    WrongPeriod(&'static str, &'static str),

    #[error("unknown item {0:?}")]
    UnknownItem(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("nothing to train")]
    NothingToTrain,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0}")]
    Pipeline(String),

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

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
