use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the tracking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence is not sorted at index {index}")]
    Unsorted { index: usize },

    #[error("too few events: need at least {needed}, got {got}")]
    TooFewEvents { needed: usize, got: usize },

    #[error("bad magic bytes in {0}")]
    BadMagic(String),

    #[error("expected a rank-3 array, found rank {0}")]
    Rank(usize),

    #[error("unsupported dtype {0:?} (only little-endian f32 is accepted)")]
    Dtype(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("training diverged: {0}")]
    NonFinite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    /// True for failures of the filesystem rather than of the data or configuration.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
