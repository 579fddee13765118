use std::io;

use thiserror::Error;

/// Errors produced by the despeckling toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, parameters).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A value fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A covariance field is not positive definite at some pixel.
    #[error("covariance not positive definite at row {row}, col {col}: r_hh={r_hh}, r_vv={r_vv}, r_hv={r_hv}")]
    NotPositiveDefinite {
        row: usize,
        col: usize,
        r_hh: f64,
        r_vv: f64,
        r_hv: f64,
    },

    /// A region has zero variance, so ENL is undefined.
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    /// A file could not be decoded.
    #[error("decode error: {0}")]
    Decode(String),

    /// A file format variant that is not supported.
    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for errors that originate in the filesystem or in file decoding.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Decode(_) | Error::Unsupported(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
