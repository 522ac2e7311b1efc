//! Error type shared by every module in the engine.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Canvas or tile dimensions do not match what the operation requires.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Index or region falls outside the canvas and wrap mode is off.
    #[error("bounds error: {0}")]
    Bounds(String),

    /// Tile fusion saw a missing or duplicate tile.
    #[error("fusion error: {0}")]
    Fusion(String),

    /// Division by a vanishing schedule coefficient.
    #[error("singularity error: {0}")]
    Singularity(String),

    /// Reverse step called with a non-decreasing timestep pair.
    #[error("ordering error: t={t} must be greater than t_prev={t_prev}")]
    Ordering { t: usize, t_prev: i64 },

    /// Cache reuse requested without a valid anchor.
    #[error("cache state error: {0}")]
    CacheState(String),

    /// Trace replay could not serve a request.
    #[error("replay error at step {step}, tile {tile}: {msg}")]
    Replay { step: u32, tile: u32, msg: String },

    /// Metric is undefined for the given inputs (zero denominator).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A worker wrote outside its assigned region or a region was left uncovered.
    #[error("ownership violation: {0}")]
    Ownership(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("report encoding error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
