use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violated a shape or dimension precondition.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Input violated a value-level precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A binary or text file did not conform to its format.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    /// A numeric routine failed to converge or produced non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Internal bookkeeping disagreed with itself (e.g. a stale winner index).
    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
