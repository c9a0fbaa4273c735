//! Simulation and inference toolkit for RIS-assisted links: draws the
//! end-to-end equivalent channel magnitude under correlated Rayleigh or
//! generalized multi-wave fading with phase errors, fits a two-component
//! Nakagami-m mixture by EM, and evaluates outage probability analytically
//! and by Monte Carlo.

pub mod analysis;
pub mod channel;
pub mod error;
pub mod experiments;
pub mod mixture;
pub mod sampling;

pub use error::{Error, Result};
