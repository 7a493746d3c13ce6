use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: usize },

    /// The thresholded balancing engine refused to sign a vector.
    #[error("balancing failed: <r,c> = {inner:.6} or ||r||_inf = {r_inf:.6} exceeds threshold {threshold} in magnitude")]
    BalanceFail { inner: f64, r_inf: f64, threshold: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("handshake rejected: {0}")]
    Handshake(String),

    #[error("decode error at byte {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("load error in {path} at row {row}, column {column}: {reason}")]
    Load {
        path: PathBuf,
        row: usize,
        column: usize,
        reason: String,
    },

    #[error("peer disconnected: {0}")]
    Disconnected(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
