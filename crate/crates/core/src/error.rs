use thiserror::Error;

use crate::localpoly::Side;

pub type Result<T> = std::result::Result<T, RdError>;

/// Failures raised by the estimation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RdError {
    #[error("no observations with positive kernel weight on the {side} side of the cutoff")]
    EmptySide { side: Side },

    #[error("weighted design is numerically singular (reciprocal condition number {rcond:.3e})")]
    SingularDesign { rcond: f64 },

    #[error("coordinate descent did not converge after {iterations} sweeps (last change {max_change:.3e})")]
    NotConverged { iterations: usize, max_change: f64 },

    #[error("pilot residuals have zero variance; the outcome is exactly explained by the local linear fit")]
    DegenerateResiduals,

    #[error("insufficient data on the {side} side: need {needed} observations, have {available}")]
    InsufficientData {
        side: Side,
        needed: usize,
        available: usize,
    },

    #[error("first-stage jump {jump:.3e} is too small to identify a fuzzy effect")]
    WeakDiscontinuity { jump: f64 },

    #[error("conditional covariance estimate is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NonPsdCovariance { min_eigenvalue: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl RdError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        RdError::InvalidInput(msg.into())
    }
}
