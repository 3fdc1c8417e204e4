use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value is out of range or inconsistent.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numeric operation hit non-finite input or output.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation would exceed the element budget.
    #[error("resource budget exceeded: {0}")]
    Resource(String),

    /// A task configuration or artifact set is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A bound or equivalence check did not hold.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file exists but its contents do not parse.
    #[error("malformed file: {0}")]
    Format(String),

    /// Invariant violation inside the library itself.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
