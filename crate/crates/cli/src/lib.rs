//! Command-line front end of `pdmix`: configuration, CSV ingestion, chain
//! execution and output files.

pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod run;
pub mod summarize;

pub use config::{parse_config, resolve, ConfigFile, KappaRule, Preset, RunConfig};
pub use error::{CliError, CliResult};
