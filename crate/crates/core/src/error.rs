//! Error type shared by every solver in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: operator has dim {expected}, matrix has dim {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("positivity lost in the profile flow at alpha = {alpha} after {retries} step halvings")]
    StepSize { alpha: f64, retries: usize },

    #[error("eta does not change sign over the bracket; samples (alpha, eta) = {samples:?}")]
    Bracket { samples: Vec<(f64, f64)> },

    #[error("eta monotonicity audit failed; samples (alpha, eta) = {samples:?}")]
    MonotonicityAudit { samples: Vec<(f64, f64)> },

    #[error("no nonnegative direction decomposition up to width 3 for A = {matrix:?} (residual {residual:e})")]
    Decomposition { matrix: [f64; 3], residual: f64 },

    #[error("fundamental solution vanishes on the circle of radius {radius}")]
    UndefinedRatio { radius: f64 },

    #[error("classification inconclusive: {0}")]
    Inconclusive(String),

    #[error("exit probability estimate is zero at r = {radius}; ladder too deep for the path budget")]
    LadderTooDeep { radius: f64 },

    #[error("hitting probabilities do not decay like a power of r: {0}")]
    NotPowerLaw(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
