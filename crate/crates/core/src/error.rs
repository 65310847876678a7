use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid model: {0}")]
    ModelInvalid(String),

    #[error("parameter-infeasible: {0}")]
    ParameterInfeasible(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("phase-type dimension {dim} exceeds cap {cap}")]
    DimensionOverflow { dim: usize, cap: usize },

    #[error(
        "step refused: dt = {dt} exceeds the stability bound {bound:.3e} day; \
         use dt <= {bound:.3e} or reduce the Erlang shape J"
    )]
    StepRefused { dt: f64, bound: f64 },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("infeasible computation: {0}")]
    Infeasible(String),

    #[error("degenerate filter at step {step}: every particle has zero weight (largest log-likelihood {max_log_lik})")]
    DegenerateFilter { step: usize, max_log_lik: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::StepRefused { .. }
                | Error::Integration(_)
                | Error::Infeasible(_)
                | Error::DegenerateFilter { .. }
                | Error::ParameterInfeasible(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
