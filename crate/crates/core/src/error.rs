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

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token {0:?} not found in embedding table")]
    OovToken(String),

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("lexicon {emotion:?}: {message}")]
    Lexicon { emotion: String, message: String },

    #[error("projection undefined: text embeds to the zero vector")]
    UndefinedProjection,

    #[error("emotion reward undefined: {0}")]
    UndefinedReward(&'static str),

    #[error(
        "anchor snapshot was built under embedder {expected} but the active embedder is {actual}"
    )]
    FingerprintMismatch { expected: String, actual: String },

    #[error("token {0:?} is not in the policy vocabulary")]
    Vocabulary(String),

    #[error("data error in sample {id}: {message}")]
    Data { id: String, message: String },

    #[error("metric input error: {0}")]
    Metric(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("synthetic spec error: {0}")]
    Spec(String),

    #[error("training diverged at step {step}: {message}")]
    Divergence {
        step: usize,
        message: String,
        /// Parameters before the failing update.
        last_good: Option<Box<crate::policy::PolicyParams>>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
