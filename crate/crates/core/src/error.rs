use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator.
#[derive(Debug, Error)]
pub enum FirmError {
    /// A configuration value violates an invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The config file could not be parsed.
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("index {index} out of bounds for {what} of size {size}")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },

    /// Power iteration did not reach the residual target.
    #[error("stationary distribution did not converge (residual {residual:e} after {iters} iterations)")]
    NonMixing { residual: f64, iters: usize },

    #[error("singular linear system: {0}")]
    Singular(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("round {round}, step {step}: {source}")]
    Context {
        round: usize,
        step: usize,
        #[source]
        source: Box<FirmError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FirmError>;

impl FirmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FirmError::Io {
            path: path.into(),
            source,
        }
    }
}
