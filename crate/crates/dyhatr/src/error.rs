//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A caller broke an operation's contract (e.g. non-scalar loss).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A softmax row with every entry masked off.
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    /// Malformed input data, with the 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("classifier fit error: {0}")]
    Fit(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::Io(_) | Error::Split(_) | Error::Checkpoint(_) => 3,
            Error::Dimension(_)
            | Error::Contract(_)
            | Error::Numeric(_)
            | Error::DegenerateMask(_)
            | Error::Metric(_)
            | Error::Fit(_) => 4,
        }
    }
}
