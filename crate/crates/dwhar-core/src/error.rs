//! Error categories shared across the library.
//!
//! Each variant maps to one user-facing failure class so callers (and the CLI
//! exit-code table) can react without string matching.

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid model/run configuration: bad dimension, non-divisible sizes,
    /// out-of-range hyperparameter. The message names the offending value.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (CSV rows, manifests, labels).
    #[error("data error{}: {msg}", fmt_line(.line))]
    Data {
        msg: String,
        /// 1-based source line when the problem comes from a text file.
        line: Option<u64>,
    },

    /// The caller violated an API contract (non-scalar loss, missing
    /// gradient, unknown flag value).
    #[error("usage error: {0}")]
    Usage(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized artifact does not match the expected layout or digest.
    #[error("format error: {0}")]
    Format(String),

    /// Invariant breakage that indicates a bug rather than bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

fn fmt_line(line: &Option<u64>) -> String {
    match line {
        Some(n) => format!(" (line {n})"),
        None => String::new(),
    }
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data { msg: msg.into(), line: None }
    }

    pub fn data_at(msg: impl Into<String>, line: u64) -> Self {
        Error::Data { msg: msg.into(), line: Some(line) }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
