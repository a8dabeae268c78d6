//! Batch pipeline over `pothole-core`: scan reconstruction and statistics,
//! roll-angle derivation, synthetic driving data, perturbation, training and
//! evaluation, each stage recorded in a digest manifest.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod svg;

pub use config::{Command, RunConfig};
pub use error::CliError;
