use thiserror::Error;

/// Errors raised by estimation, simulation and testing routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LrdError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("memory parameter d = {0} outside [0, 1/2)")]
    MemoryDomain(f64),

    #[error("GARCH recursion not stationary at t = {t}: alpha + beta = {sum}")]
    GarchNotStationary { t: f64, sum: f64 },

    #[error("singular local design at grid point i = {index} (t = {t:.4}), condition ~ {condition:.3e}")]
    SingularDesign { index: usize, t: f64, condition: f64 },

    #[error("singular matrix `{what}` at t = {t:.4}")]
    SingularMatrix { what: &'static str, t: f64 },

    #[error("empty kernel window at t = {t:.4}")]
    EmptyWindow { t: f64 },

    #[error("trimmed range empty: n = {n}, floor(n b) = {trim}")]
    EmptyTrimmedRange { n: usize, trim: usize },

    #[error("quadrature failed to converge: estimate {estimate}, achieved error {achieved:.3e}")]
    Quadrature { estimate: f64, achieved: f64 },

    #[error("eigendecomposition failed")]
    Eigen,

    #[error("{failed} of {total} replications failed (limit {limit})")]
    TooManyFailures { failed: usize, total: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, LrdError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> LrdError {
    LrdError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
