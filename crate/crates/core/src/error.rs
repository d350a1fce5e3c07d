use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("pgm parse error at byte {offset}: {reason}")]
    Pgm { offset: usize, reason: String },

    #[error(
        "solver did not converge after {iterations} iterations (relative residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mask is empty, nothing to reconstruct from")]
    EmptyMask,

    #[error("decode error: {0}")]
    Decode(#[from] DecodeError),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Structured failures when parsing a PIC1 stream.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    Version(u8),
    #[error("unknown {field} tag {value}")]
    UnknownTag { field: &'static str, value: u8 },
    #[error("length mismatch: expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid header: {0}")]
    Header(String),
}

pub type Result<T> = std::result::Result<T, Error>;
