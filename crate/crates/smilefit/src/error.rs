//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SmileFitError>;

#[derive(Debug, Error)]
pub enum SmileFitError {
    /// A numeric argument is outside the function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Bad user-supplied configuration.
    #[error("invalid config: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("input error: {0}")]
    Input(String),

    /// A quote file row failed to parse.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    /// Quote file contained no usable quotes.
    #[error("no quotes")]
    NoQuotes,

    /// A price is outside its static no-arbitrage bounds.
    #[error("price outside no-arbitrage bounds: {0}")]
    PriceBounds(String),

    /// The optimizer could not produce a feasible fit.
    #[error("optimizer failure: {0}")]
    Optimizer(String),

    /// A constructed surface failed its no-arbitrage checks.
    #[error("arbitrage rejection: {0}")]
    ArbitrageRejected(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl SmileFitError {
    /// Process exit code for the CLI: 2 input, 3 arbitrage, 4 optimizer, 1 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            SmileFitError::Input(_)
            | SmileFitError::Parse { .. }
            | SmileFitError::NoQuotes
            | SmileFitError::Io(_)
            | SmileFitError::Json(_)
            | SmileFitError::Csv(_) => 2,
            SmileFitError::ArbitrageRejected(_) => 3,
            SmileFitError::Optimizer(_) => 4,
            _ => 1,
        }
    }
}
