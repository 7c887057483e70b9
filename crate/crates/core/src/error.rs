use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("matrix is not positive semidefinite ({0})")]
    NotPositiveSemidefinite(&'static str),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("invalid block partition: {0}")]
    InvalidPartition(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("missing constituent `{0}`; set kappa_sq directly instead of deriving it")]
    MissingConstituent(&'static str),

    #[error("steady-state variance is infinite for gamma_b = 0")]
    InfiniteVariance,

    #[error("non-finite field value {0}")]
    NonFiniteField(f64),

    #[error("run needs {steps} steps, above the cap of {cap}; raise the cap or tau")]
    StepCapExceeded { steps: u64, cap: u64 },

    #[error("duration {duration:e} s is not an integer number of tau = {tau:e} s steps")]
    NonIntegralSteps { duration: f64, tau: f64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("delay {delay:e} s exceeds the usable span of the record")]
    DelayOutOfRange { delay: f64 },

    #[error("record tau {record:e} s does not match configured tau {config:e} s")]
    TauMismatch { record: f64, config: f64 },

    #[error("augmented dimension {dim} exceeds the cap of {cap}")]
    DimensionCapExceeded { dim: usize, cap: usize },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
