//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by scenario parsing, graph construction, and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A scenario file failed validation; the message carries field context.
    #[error("scenario: {0}")]
    Scenario(String),

    /// No route exists between two endpoints that must communicate.
    #[error("no route from '{from}' to '{to}' in the underlay")]
    NoRoute { from: String, to: String },

    /// Inputs whose shapes or index ranges do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A well-formed problem instance that admits no feasible answer.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Arguments outside their documented domain.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
