//! File formats, reports and the command-line front end for `vqflow-core`.

mod bytes;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod vqft;

pub use error::{Error, Result};
pub use vqflow_core as core;
