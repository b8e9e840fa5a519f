use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates its documented invariant.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A logarithm or fractional power of a non-positive quantity.
    #[error("log-domain error: {0}")]
    LogDomain(String),

    /// A second derivative that must be negative is not.
    #[error("degenerate Hessian: {0}")]
    DegenerateHessian(String),

    /// A map or formula hits a zero denominator.
    #[error("singular: {0}")]
    Singular(String),

    /// The requested vector field has no closed-form flow.
    #[error("no closed-form flow for `{0}`")]
    NotCatalog(String),

    /// A query point maps outside the solved grid.
    #[error("extrapolation: {0}")]
    Extrapolation(String),

    /// Newton iteration did not converge.
    #[error("solver did not converge after {iterations} iterations (residual history {history:?})")]
    NoConvergence { iterations: usize, history: Vec<f64> },

    /// Configuration could not be read or validated.
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check(cond: bool, field: &'static str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter { field, reason: reason.to_string() })
    }
}
