use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while decoding a `.fkdl` container.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected \"FKDL\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated header: {0} bytes, need 17")]
    TruncatedHeader(usize),
    #[error("truncated records: record {record} needs {needed} more bytes, {available} left")]
    TruncatedRecords {
        record: usize,
        needed: usize,
        available: usize,
    },
    #[error("trailing data: {0} bytes after the last record")]
    TrailingBytes(usize),
    #[error("unknown mode code {0}")]
    UnknownMode(u8),
    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: u32, classes: u32 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("invalid record {record}: {reason}")]
    InvalidRecord { record: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
