use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown model key {0:?}")]
    UnknownModel(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ensemble mismatch: {0}")]
    EnsembleMismatch(String),

    #[error("regression failed at step {step} (condition estimate {condition:.3e})")]
    Regression { step: usize, condition: f64 },

    #[error("non-finite {quantity} at step {step}")]
    NonFinite { quantity: &'static str, step: usize },

    #[error("non-finite running cost on path {path} at step {step}")]
    NonFiniteCost { path: usize, step: usize },

    #[error("finite-difference quotient of {function} is not finite")]
    GradCheck { function: &'static str },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
