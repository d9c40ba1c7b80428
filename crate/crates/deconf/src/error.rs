use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A shape or length did not match what the operation requires.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A configuration value violates its invariants.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A numeric value became NaN or infinite where finiteness is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Requested counts or constraints cannot be realized.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Input is degenerate for the requested statistic (single class,
    /// empty bin, too few samples, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
