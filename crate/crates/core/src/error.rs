use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A precondition of one of the analytic results does not hold
    /// (for example `d <= 1/H` for fractional Brownian motion).
    #[error("divergent regime: {0}")]
    Divergent(String),

    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),

    #[error("kernel validation failed: {0}")]
    KernelValidation(String),

    #[error("lattice: {0}")]
    Lattice(String),

    #[error("fractional Gaussian noise embedding failed: {0}")]
    Embedding(String),

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
