use thiserror::Error;

/// Errors raised by problem construction, proximal maps, schedules and steps.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("point is on the boundary of the mirror map domain (coordinate {index} = {value:e})")]
    Boundary { index: usize, value: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("unsupported proximal combination: mirror map {mirror}, regularizer {regularizer}, domain {domain}")]
    UnsupportedCombination {
        mirror: String,
        regularizer: String,
        domain: String,
    },

    #[error("proximal subproblem did not converge in {iterations} iterations (residual {residual:e})")]
    ProxNotConverged {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("optimum unknown for this problem")]
    MissingOptimum,

    #[error("incompatible combination: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
