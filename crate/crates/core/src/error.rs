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

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("port `{port}` failed for record {record_id}: {message}")]
    Port {
        port: &'static str,
        record_id: String,
        message: String,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: expected dim {expected}, got {found}")]
    Shape { expected: usize, found: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("duplicate id `{0}`")]
    Duplicate(String),

    #[error("non-finite value in embedding `{0}`")]
    NonFinite(String),

    #[error("missing embeddings for {} record(s): {}", .0.len(), .0.join(", "))]
    MissingEmbeddings(Vec<String>),

    #[error("unknown id `{0}`")]
    Lookup(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("image loader failure: {0}")]
    Loader(String),

    #[error("run interrupted after {0} checkpointed shard(s)")]
    Interrupted(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failure reported by a pluggable component before it is tied to a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortFailure {
    pub port: &'static str,
    pub message: String,
}

impl PortFailure {
    pub fn new(port: &'static str, message: impl Into<String>) -> Self {
        Self {
            port,
            message: message.into(),
        }
    }

    pub fn for_record(self, record_id: &str) -> Error {
        Error::Port {
            port: self.port,
            record_id: record_id.to_string(),
            message: self.message,
        }
    }
}

impl std::fmt::Display for PortFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.port, self.message)
    }
}
