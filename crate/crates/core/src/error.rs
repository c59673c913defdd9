use thiserror::Error;

use crate::specfun::QuadratureResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke an operation precondition (invalid model, shape mismatch, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Adaptive quadrature ran out of refinements before meeting its tolerance.
    #[error("quadrature did not converge ({context}): best estimate {best:?}")]
    Accuracy {
        context: String,
        best: QuadratureResult,
    },

    #[error("sampler stalled after {attempts} proposals: {diagnostic}")]
    Sampler { attempts: u64, diagnostic: String },

    #[error("total jump rate underflow at t = {time}: {diagnostic}")]
    Stall { time: f64, diagnostic: String },

    /// Non-finite value produced mid-simulation. `jump_log` carries (time, Q) of every jump so far.
    #[error("numeric failure: {message}")]
    Numeric {
        message: String,
        jump_log: Vec<(f64, [f64; 3])>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("ensemble failed: {failures} of {n} trajectories failed (first: {first})")]
    Ensemble {
        failures: usize,
        n: usize,
        first: String,
    },

    #[error("configuration error at {field}: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric {
            message: message.into(),
            jump_log: Vec::new(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
