use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CcmError>;

#[derive(Debug, Error)]
pub enum CcmError {
    #[error("empty tracklet")]
    EmptyTracklet,

    #[error("degenerate feature: norm {norm:e} is below 1e-12")]
    DegenerateFeature { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("consistency requires ≥3 cameras (got {0})")]
    TooFewCameras(usize),

    #[error("no consistent matches for pair ({p},{q})")]
    NoConsistentMatches { p: u32, q: u32 },

    #[error("non-finite objective value {0}")]
    NonFiniteObjective(f64),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("missing ground-truth identity for tracklet {0}")]
    MissingIdentity(String),

    #[error("duplicate tracklet id {0:?}")]
    DuplicateTracklet(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CcmError {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        CcmError::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CcmError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad user input (config, files, arguments)
    /// rather than a failure during computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            CcmError::InvalidArgument(_)
                | CcmError::InvalidConfig(_)
                | CcmError::TooFewCameras(_)
                | CcmError::DuplicateTracklet(_)
                | CcmError::Parse { .. }
                | CcmError::DimensionMismatch { .. }
        )
    }
}
