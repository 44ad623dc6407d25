use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::Role;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty training corpus")]
    EmptyCorpus,

    #[error("dangling dialog reference `{0}`")]
    DanglingReference(String),

    #[error("dialog `{id}` has rating {rating}, expected an integer in 1..=5")]
    InvalidRating { id: String, rating: i64 },

    #[error("invalid dialog `{id}`: {reason}")]
    InvalidDialog { id: String, reason: String },

    #[error("invalid pair {first} / {second}: {reason}")]
    InvalidPair {
        first: String,
        second: String,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dialog `{id}` has no {role:?} turn to replace")]
    NoReplaceableTurn { id: String, role: Role },

    #[error("replacement pool has no other dialog with a {role:?} turn")]
    PoolTooSmall { role: Role },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("neighbor index is empty")]
    EmptyIndex,

    #[error("dialog `{0}` has no rating")]
    MissingRating(String),

    #[error("exact Shapley enumeration supports at most {max} points, got {n}")]
    TooManyPoints { n: usize, max: usize },

    #[error("removal fraction {0} outside [0, 1)")]
    InvalidFraction(f64),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
