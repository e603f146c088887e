//! Numerics for the p-spin Sherrington-Kirkpatrick model: exact finite-N
//! enumeration, limit constants, and disorder-replica experiments.

pub mod covariance;
pub mod error;
pub mod harness;
pub mod model;
pub mod momentlab;
pub mod multiindex;
pub mod numeric;
pub mod rng;
pub mod theory;

pub use error::{PspinError, Result};
