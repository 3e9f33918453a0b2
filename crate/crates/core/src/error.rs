//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures reading a binary pack or checkpoint. Each corruption mode is a
/// distinct variant so callers can tell a wrong file from a damaged one.
#[derive(Debug, Error)]
pub enum PackError {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: Vec<u8> },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated payload: needed {needed} bytes, file has {actual}")]
    Truncated { needed: usize, actual: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed content: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("point ({lat}, {lon}) lies outside the basin grid")]
    OutOfBasin { lat: f64, lon: f64 },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("missing data: {0}")]
    Missing(String),
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
