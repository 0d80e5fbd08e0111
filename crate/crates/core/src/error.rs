use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the benchmark pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar output node, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: expected {expected} bytes, found {found}", path.display())]
    Length {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{}: checksum mismatch (manifest {expected}, file {found})", path.display())]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{}: format version {found} is not supported (expected {expected})", path.display())]
    Version {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{}: malformed json: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image source {}: {message}", path.display())]
    ImageSource { path: PathBuf, message: String },

    #[error("unknown method `{id}`; registered methods: {}", available.join(", "))]
    UnknownMethod { id: String, available: Vec<String> },

    #[error("singular regression system with {coalitions} coalitions over {features} features")]
    SingularSystem { coalitions: usize, features: usize },

    #[error("calibration failed: no alpha reached mean accuracy {threshold}")]
    CalibrationFailed {
        threshold: f64,
        table: Vec<(f64, f64)>,
    },

    #[error("transport solver did not converge after {iterations} pivots")]
    SolverStalled { iterations: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
