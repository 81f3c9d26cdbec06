use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("invalid configuration for `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },

    #[error("posterior has no maximizer: flat prior with an empty belief")]
    NoMaximizer,

    #[error("variance undefined for a belief with zero precision")]
    UndefinedVariance,

    #[error("MAP solver did not converge; last bracket [{lo}, {hi}], residual {residual:e}")]
    SolverFailure { lo: f64, hi: f64, residual: f64 },

    #[error("multivariate MAP solver did not converge; residual norm {residual:e}")]
    MvSolverFailure { last: Vec<f64>, residual: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("step index mismatch: belief holds {count} observations, absorbing k = {k}")]
    StepIndexMismatch { count: u64, k: u64 },

    #[error("response mode mismatch: sequence expects {expected}, observation is {actual}")]
    ModeMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("intensity {x} outside admissible range [{min}, {max}]")]
    OutOfRange { x: f64, min: f64, max: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ragged traces: expected {expected} records, trace has {actual}")]
    RaggedTraces { expected: usize, actual: usize },

    #[error("sweep produced no usable candidates ({failures} trial failures)")]
    EmptySweep { failures: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
