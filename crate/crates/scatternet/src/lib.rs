//! File formats, checkpoints and the command-line interface around
//! `scatternet-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod tables;

pub use error::{Error, Result};
