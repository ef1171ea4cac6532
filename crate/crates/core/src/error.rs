use thiserror::Error;

/// Every failure mode of the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("row sums total {rows} but column sums total {cols}")]
    MarginMismatch { rows: u64, cols: u64 },

    #[error("margin out of range: {0}")]
    OutOfRange(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("density must lie strictly between 0 and 1")]
    DegenerateDensity,

    #[error("resource limit exceeded: {what} ({used} > {limit})")]
    ResourceLimit { what: &'static str, used: u64, limit: u64 },

    #[error("saddle iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("numerical blowup: {0}")]
    NumericalBlowup(String),

    #[error("prefactor identity violated: entropy form {entropy} vs product form {product}")]
    IdentityViolation { entropy: f64, product: f64 },

    #[error("domain error: {0}")]
    DomainError(String),
}

impl Error {
    /// True for errors caused by the numerical machinery rather than the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ResourceLimit { .. }
                | Error::NonConvergence { .. }
                | Error::NumericalBlowup(_)
                | Error::IdentityViolation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
