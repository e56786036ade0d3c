//! Remaining-useful-life prediction for turbofan engines with a
//! spatio-temporal attention encoder and a hidden physics-informed network.

pub mod ahpinn;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod prepared;
pub mod synthetic;
pub mod training;

pub use error::{CoreError, Result};
