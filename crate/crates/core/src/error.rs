use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A structurally invalid input (shape mismatch, unnormalized distribution, ...).
    #[error("invalid input: {0}")]
    Validation(String),

    /// An iterative procedure did not reach its tolerance.
    #[error("{op} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        op: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A linear system could not be solved.
    #[error("singular linear system in {0}")]
    Singular(&'static str),

    /// A quantity that must stay finite became NaN or infinite.
    #[error("non-finite value in {op}: {detail}")]
    NonFinite { op: &'static str, detail: String },

    #[error("json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Domain {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn invalid(detail: impl Into<String>) -> Error {
    Error::Validation(detail.into())
}
