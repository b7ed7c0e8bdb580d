use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("{context}: bad magic {found:?}")]
    BadMagic { context: String, found: [u8; 4] },

    #[error("{context}: version mismatch (expected {expected}, found {found})")]
    Version {
        context: String,
        expected: u32,
        found: u32,
    },

    #[error("{context}: unsupported dtype code {code}")]
    Dtype { context: String, code: u8 },

    #[error("{context}: truncated payload ({detail})")]
    Truncated { context: String, detail: String },

    #[error("{context}: corrupted block ({detail})")]
    Corrupted { context: String, detail: String },

    #[error("duplicate seq_id {0:?}")]
    Duplicate(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("sets are not aligned: {0}")]
    Misaligned(String),

    #[error("non-increasing dims: {0}")]
    NonIncreasingDims(String),

    #[error("rank-deficient matrix: {0}")]
    RankDeficient(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing level {0:?}")]
    MissingLevel(String),

    #[error("missing embedding for {0:?}")]
    MissingEmbedding(String),

    #[error("hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("metadata: {0}")]
    Metadata(String),

    #[error("dataset {name:?} has {count} single-mutation variants; at least {required} are required")]
    TooFewSingles {
        name: String,
        count: usize,
        required: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs, as opposed to failures
    /// inside the numerical routines.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Numerical(_))
    }
}
