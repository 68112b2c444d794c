use thiserror::Error;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The ray from `F` through the point never leaves the cone (`lambda_min_F >= 1`).
    #[error("degenerate radial projection: lambda_min_F = {0} >= 1")]
    DegenerateRay(f64),

    #[error("iteration cap exceeded: {0}")]
    IterationCap(String),

    #[error("constraint drift {0:e} exceeds renormalization tolerance")]
    ConstraintDrift(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
