use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed scenario document: {0}")]
    Parse(#[from] serde_json::Error),

    /// A scenario invariant is violated; `key` names the offending field.
    #[error("invalid value for `{key}`: {reason}")]
    Validation { key: String, reason: String },

    #[error("delay {delay} out of range for size {size}")]
    DelayOutOfRange { delay: f64, size: usize },

    #[error("prefix of length {prefix} is shorter than the maximum delay {max_delay}")]
    PrefixTooShort { prefix: usize, max_delay: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("layer index {index} out of range 1..={layers}")]
    LayerOutOfRange { index: usize, layers: usize },

    #[error("operation requires a {expected} stack")]
    RoleMismatch { expected: &'static str },

    #[error("zero distance between meta-atoms")]
    ZeroDistance,

    #[error("matrix is singular or not positive definite")]
    Singular,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn validation(key: &str, reason: impl Into<String>) -> Self {
        Error::Validation {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}
