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

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("empty bundle: manifest lists no layers")]
    EmptyBundle,

    #[error("length mismatch in {what}: expected {expected} elements, found {actual}")]
    LengthMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid dimensions for {what}: {rows}x{cols}")]
    InvalidDims { what: String, rows: usize, cols: usize },

    #[error("element {value} at index {index} of {what} is outside [{min}, {max}]")]
    OutOfRange {
        what: String,
        index: usize,
        value: i64,
        min: i64,
        max: i64,
    },

    #[error("not a permutation of 0..{len}: {detail}")]
    NotPermutation { len: usize, detail: String },

    #[error("invalid clustering: {0}")]
    InvalidClustering(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("invalid array config: {0}")]
    InvalidConfig(String),

    #[error("invalid error model: {0}")]
    InvalidErrorModel(String),

    #[error("instance too large for enumeration: {what} = {size} exceeds limit {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// True for failures caused by the filesystem rather than by the content
    /// of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::MissingFile(_))
    }
}
