use std::path::PathBuf;

/// Errors raised anywhere in the hashing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
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

    #[error("empty graph: no edges left after preprocessing")]
    EmptyGraph,

    #[error("no labels")]
    NoLabels,

    #[error("{path}:{line}: label references unknown node `{token}`")]
    UnknownNode {
        path: PathBuf,
        line: usize,
        token: String,
    },

    #[error("node `{token}` labeled twice with conflicting classes `{first}` and `{second}`")]
    ConflictingLabel {
        token: String,
        first: String,
        second: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in layer {layer}, kernel {kernel}")]
    NonFinite { layer: usize, kernel: String },

    #[error("solver did not converge after {iterations} iterations (KKT violation {violation:e})")]
    NoConvergence { iterations: usize, violation: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("malformed artifact: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
