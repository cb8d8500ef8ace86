//! Simulation of a unicycle robot driven by model predictive control over
//! lossy, delaying wireless links.

pub mod channel;
pub mod controller;
pub mod error;
pub mod estimator;
pub mod link;
pub mod sim;
pub mod vehicle;

pub use error::{ConfigError, Error, InvalidArgument};
