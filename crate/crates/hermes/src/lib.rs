//! Std companion to `hermes-core`: cohort and interaction file formats,
//! checkpoints, ablation reports, run configuration, the HTTP service and
//! the `hermes` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod pipeline;
pub mod report;
pub mod serve;
pub mod tsv;

pub use error::{Error, Result};

/// Tool version embedded in every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
