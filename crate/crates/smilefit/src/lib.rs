//! Arbitrage-free implied volatility surfaces from a sigmoid-polynomial smile.

pub mod black_scholes;
pub mod calibration;
pub mod error;
pub mod market_data;
pub mod no_arbitrage;
pub mod real;
pub mod smile;
pub mod cli;
pub mod surface;
pub mod svi;

pub use error::{Result, SmileFitError};
pub use real::Real;

/// Default-precision smile parameters.
pub type SmileParamsF64 = smile::SmileParams<f64>;
/// Default-precision model configuration.
pub type ModelConfigF64 = smile::ModelConfig<f64>;
