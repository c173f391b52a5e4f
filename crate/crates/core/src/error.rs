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

    #[error("line {line}: malformed record, field `{field}`: {message}")]
    Malformed {
        line: usize,
        field: String,
        message: String,
    },

    #[error("duplicate document id `{doc_id}` at records {first} and {second}")]
    DuplicateDocument {
        doc_id: String,
        first: usize,
        second: usize,
    },

    #[error("invalid index file: {0}")]
    IndexFormat(String),

    #[error("empty collection")]
    EmptyCollection,

    #[error("empty text for MLE")]
    EmptyText,

    #[error("zero probability under target model for term `{0}`")]
    ZeroProbability(String),

    #[error("dialogue empty after analysis")]
    EmptyQuery,

    #[error("empty list")]
    EmptyList,

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("unknown sentence `{0}`")]
    UnknownSentence(String),

    #[error("candidate pool mismatch: {0}")]
    PoolMismatch(String),

    #[error("no relevant items for query `{0}`")]
    NoRelevant(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("stratum `{0}` has fewer than 2 queries")]
    SmallStratum(String),

    #[error("external scorer, request `{id}`: {message}")]
    Scorer { id: String, message: String },

    #[error("external scorer: {0}")]
    Protocol(String),

    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}
