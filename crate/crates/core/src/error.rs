use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    Parse(String),

    /// A scenario value violates an invariant. `key` is the config key at fault.
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },

    #[error("finish unreachable: |q_F - q_0| = {distance:.3} m exceeds {reach:.3} m ({steps} steps of {step:.3} m)")]
    Unreachable {
        distance: f64,
        reach: f64,
        steps: usize,
        step: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible input: {0}")]
    Infeasible(String),

    #[error("search budget exceeded: {needed} evaluations > limit {limit}")]
    Budget { needed: u128, limit: u128 },

    #[error("solver failure at iteration {iteration}: {message}")]
    Solver { iteration: usize, message: String },
}

impl Error {
    pub(crate) fn invalid(key: &str, message: impl Into<String>) -> Self {
        Error::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }
}
