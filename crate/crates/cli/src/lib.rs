//! File formats, configuration parsing, and the command implementations
//! behind the `alseg` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod dataset_io;
pub mod error;
pub mod tensorfile;

pub use error::{CliError, CliResult};
