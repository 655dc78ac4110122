//! Crate-wide error type.

/// Errors reported by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A vector or matrix had the wrong size for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The requested object does not exist under the given data
    /// (e.g. no stabilizing certificate, no feasible power).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Input so degenerate that no meaningful answer exists
    /// (e.g. every sampled state was skipped).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A configured resource budget would be exceeded.
    #[error("budget exceeded: {0}")]
    Budget(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }
}
