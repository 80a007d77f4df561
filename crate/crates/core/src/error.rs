use std::io;

use thiserror::Error;

/// Errors raised across the codec, parsers and model code.
#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),
    /// A read ran past the end of the available bits.
    #[error("truncated stream: needed {needed} bits at bit {position}, {available} available")]
    Truncated {
        position: usize,
        needed: usize,
        available: usize,
    },
    /// The stream decoded but its content is inconsistent.
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u8, found: u8 },
    /// Malformed input file; `offset` is the byte position of the failure.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}
