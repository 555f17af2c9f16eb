//! Error and result types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, LpciError>;

/// Errors raised by panel ingestion, forest fitting, and the interval engines.
#[derive(Debug, Error)]
pub enum LpciError {
    /// A function argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// Input columns do not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// More than one observation for the same (group, time) cell.
    #[error("duplicate observation for group {group} at time {time}")]
    Duplicate { group: String, time: i64 },

    /// Some (group, time) cell has no observation.
    #[error("unbalanced panel: {0}")]
    Unbalanced(String),

    /// A column cannot be standardized because it has no spread.
    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    /// A residual history is too short for the requested window.
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    /// The model or residual state cannot accept the request.
    #[error("state error: {0}")]
    State(String),

    /// The operation is not defined for the requested train/test layout.
    #[error("mode error: {0}")]
    Mode(String),

    /// The calibration set has too few points for the requested level.
    #[error("calibration too small: {0}")]
    CalibrationTooSmall(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
