use std::io;

use thiserror::Error;

/// Errors produced by the simulation, learning and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Array shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A computation produced NaN or infinity.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    /// Structurally invalid file contents (bad magic, trailing bytes, bad JSON).
    #[error("malformed file: {0}")]
    Format(String),

    /// A checkpoint or manifest does not match the architecture it is used with.
    #[error("architecture mismatch: {0}")]
    Mismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! param_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Parameter(format!($($arg)*))
    };
}

macro_rules! ensure_param {
    // `!(x > 0.0)` is deliberate: it also rejects NaN.
    ($cond:expr, $($arg:tt)*) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::error::Error::Parameter(format!($($arg)*)));
        }
    };
}

pub(crate) use ensure_param;
pub(crate) use param_err;
