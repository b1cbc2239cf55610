//! Tools for dissecting catastrophic forgetting in small neural networks.

pub mod analytic;
pub mod container;
pub mod data;
pub mod error;
pub mod harness;
pub mod mitigations;
pub mod nn;
pub mod numeric;
pub mod probes;
pub mod train;

pub use error::{Error, Result};
