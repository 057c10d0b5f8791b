//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong in this crate.
///
/// The variants separate caller mistakes (`Input`, `Config`, `Format`) from
/// runtime failures (`Numerical`, `Training`, `Resource`), so a front end can
/// map them to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad data handed to a function: wrong shape, non-finite values,
    /// unparsable file contents.
    #[error("invalid input: {0}")]
    Input(String),

    /// Inconsistent or out-of-range settings (layer widths, quantile levels,
    /// sampler widths, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Linear algebra or sampling broke down (non-positive pivot, collapsed
    /// slice bracket, non-finite objective).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A guard refused to allocate or factor something too large.
    #[error("resource limit: {0}")]
    Resource(String),

    /// The optimizer left the feasible region (non-finite likelihood).
    #[error("training failure: {0}")]
    Training(String),

    /// A model file is not something this crate can read.
    #[error("model format: {0}")]
    Format(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error is the caller's fault (bad input/config/file),
    /// as opposed to an internal numerical or resource failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Input(_) | Error::Config(_) | Error::Format(_) | Error::Io(_) | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
