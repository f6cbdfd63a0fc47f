//! File formats, dataset readers, benchmarks and the command-line front end
//! for `balquant-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod files;
pub mod idx;

pub use error::{Error, Result};

/// Environment variable holding the log filter (`error`, `info`, `debug`, ...).
pub const LOG_ENV: &str = "BALQUANT_LOG";
