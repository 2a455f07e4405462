//! Error type shared by every module in the crate.
//!
//! All fallible public functions return [`Result`]. Error messages are a
//! single line so the CLI can forward them verbatim in machine-readable
//! output.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum FastVarError {
    /// Two tensors (or a tensor and an index set) disagree on dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A scalar argument is out of its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was called in an order the pipeline does not allow,
    /// e.g. writing a layer cache twice or at the wrong step.
    #[error("invalid state: {0}")]
    State(String),

    /// A serialized artifact could not be decoded. `offset` is the byte
    /// position at which decoding failed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A run configuration file is structurally valid but semantically wrong.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl FastVarError {
    /// Stable machine-readable tag for each variant, used by the CLI error
    /// envelope and the C ABI status codes.
    pub fn kind(&self) -> &'static str {
        match self {
            FastVarError::Shape(_) => "shape",
            FastVarError::InvalidArgument(_) => "invalid_argument",
            FastVarError::State(_) => "state",
            FastVarError::Parse { .. } => "parse",
            FastVarError::Config(_) => "config",
            FastVarError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, FastVarError>;
