//! Training protocol, evaluation, experiment grid and reporting.

pub mod config;
mod error;
pub mod experiment;
pub mod grid;
pub mod metrics;
pub mod reconstruct;
pub mod report;
pub mod stats;
pub mod suite;
pub mod train;

pub use error::{HarnessError, Result};
