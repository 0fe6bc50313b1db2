//! Error type shared across the crate.
//!
//! Every fallible public operation returns [`Result`]. The variants map onto the
//! CLI's exit-code contract: usage and configuration problems exit with code 2,
//! I/O problems with code 3, and verification failures (which are not errors but
//! ordinary `false` results) with code 1.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes or extents do not line up for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A scalar argument is outside its documented domain (zero head count,
    /// odd rotary width, position out of range, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A configuration document is structurally valid JSON but violates a
    /// cross-field constraint (head counts that do not divide, wrong variant
    /// fields, inconsistent ridge point, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The operation conflicts with mutable state (cache length mismatch,
    /// unknown sequence id, page-pool exhaustion, ...).
    #[error("invalid state: {0}")]
    State(String),

    /// A row or block reference is outside the stored range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A document failed to parse as JSON.
    #[error("parse error: {0}")]
    Parse(String),

    /// Reading or writing a file failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI maps this error onto.
    ///
    /// 2 = usage/config/parse problems, 3 = I/O problems. Exit code 1 is
    /// reserved for verification failures, which are reported as data rather
    /// than as an `Error`.
    #[must_use]
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } => 3,
            _ => 2,
        }
    }
}
