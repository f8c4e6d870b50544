//! Command-line driver for `hdfp`: config parsing, CSV ingestion and the
//! `fit`, `test`, `cv` and `simulate` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;

pub use commands::{run, Command, Overrides};
pub use config::{LoadedConfig, RunConfig};
pub use error::{CliError, CliResult};
pub use ingest::{ingest_csv, write_csv_dataset, Ingested};
