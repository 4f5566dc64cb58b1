use thiserror::Error;

/// Errors raised by model construction, simulation and inference.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },

    #[error("diffusion coefficient is not strictly positive at grid index {index} (sigma = {value})")]
    ZeroDiffusion { index: usize, value: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        field,
        reason: reason.into(),
    }
}
