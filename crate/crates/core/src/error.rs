//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DpdError>;

#[derive(Debug, Clone, Error)]
pub enum DpdError {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dimensions of vectors or matrices do not agree.
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// The model density is zero, negative or non-finite where it must not be.
    #[error("domain error at observation {index}: {detail}")]
    Domain { index: usize, detail: String },

    /// An integral or series did not reach its tolerance.
    #[error("integration failed for observation {index}: {detail} (error estimate {error_estimate:.3e})")]
    Integration {
        index: usize,
        detail: String,
        error_estimate: f64,
    },

    /// A matrix that must be inverted is singular or too ill-conditioned.
    #[error("{what} is rank deficient: eigenvalue {eigenvalue:.3e} vs largest {largest:.3e}")]
    RankDeficient {
        what: &'static str,
        eigenvalue: f64,
        largest: f64,
    },

    /// The MDPDE solver stopped before the estimating equation vanished.
    #[error("solver did not converge after {iterations} iterations (|g|_inf = {grad_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    /// Power approximation is undefined because the alternative has zero variance.
    #[error("degenerate alternative: {0}")]
    DegenerateAlternative(String),

    /// A series expansion hit its term cap before converging.
    #[error("series did not converge within {terms} terms")]
    SeriesCap { terms: usize },
}

impl DpdError {
    /// True when the failure is numerical rather than a bad argument.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, DpdError::InvalidInput(_) | DpdError::Dimension { .. })
    }
}
