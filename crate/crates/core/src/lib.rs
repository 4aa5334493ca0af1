//! Inference for the range of subsidiary-outcome values attained by
//! treatment policies that are optimal for a primary outcome.
//!
//! The pipeline runs data ([`model`]) through nuisance estimation
//! ([`nuisance`]), per-policy AIPW estimates ([`estimators`]) and
//! bootstrap-calibrated two-stage intervals ([`bands`]). [`simulate`] holds
//! the synthetic scenarios and the Monte Carlo coverage driver.

pub mod bands;
pub mod error;
pub mod estimators;
pub mod model;
pub mod nuisance;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
