use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("span {start}..{end} out of bounds for {len} tokens ({context})")]
    SpanOutOfBounds {
        start: usize,
        end: usize,
        len: usize,
        context: String,
    },

    #[error("duplicate key `{0}`")]
    DuplicateKey(String),

    #[error("missing key `{0}`")]
    MissingKey(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("need {needed} relations but only {available} are available")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("relation `{relation}` has {available} instances, need {needed}")]
    InsufficientInstances {
        relation: String,
        needed: usize,
        available: usize,
    },

    #[error("episode has no queries")]
    EmptyQuery,

    #[error("empty support set")]
    EmptySupport,

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, found: usize, context: impl Into<String>) -> Self {
        Error::DimMismatch {
            expected,
            found,
            context: context.into(),
        }
    }

    /// True for failures to read or parse input, as opposed to domain failures.
    pub fn is_parse_failure(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Malformed(_) | Error::Truncated(_) | Error::Config(_)
        )
    }
}
