//! Returns as conditionally independent Gaussian variables mixed over a random volatility.
//!
//! The crate covers the whole pipeline: loading and resampling minute prices
//! ([`ingest`]), log returns and windowed volatilities ([`returns`]), empirical
//! densities and the diffusive data-collapse check ([`distribution`]), tail fits
//! for the volatility distribution ([`tailfit`]), the mixture prediction for the
//! rescaled return density ([`mixture`]) and a synthetic generator used as a
//! ground-truth oracle ([`synth`]).

pub mod cli;
pub mod distribution;
pub mod error;
pub mod ingest;
pub mod mixture;
pub mod quadrature;
pub mod returns;
pub mod synth;
pub mod tailfit;

pub use error::{Error, Result};
