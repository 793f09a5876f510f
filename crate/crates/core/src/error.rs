use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed npy file: {0}")]
    Format(String),
    #[error("unsupported npy dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("curves do not share the same eta grid")]
    GridMismatch,
    #[error("saliency map contains a non-finite score at pixel {0}")]
    InvalidSaliency(usize),
    #[error("k = {k} is outside 0..={max}")]
    InvalidK { k: usize, max: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("linear solver did not reach tolerance after {iters} iterations (residual {residual:e})")]
    SolverDiverged { iters: usize, residual: f64 },
    #[error("invalid axes: {0}")]
    InvalidAxes(String),
    #[error("argument outside the domain: {0}")]
    Domain(String),
    #[error("covariance block is singular")]
    SingularCovariance,
    #[error("mask leaves one partition empty")]
    EmptyPartition,
    #[error("training diverged (non-finite loss at epoch {epoch})")]
    TrainingDiverged { epoch: usize },
    #[error("bias indicator must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("correlation undefined for a constant vector")]
    UndefinedCorrelation,
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for failures of the numerical machinery rather than of inputs or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SolverDiverged { .. }
                | Error::SingularCovariance
                | Error::TrainingDiverged { .. }
                | Error::UndefinedCorrelation
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
