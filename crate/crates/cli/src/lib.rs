//! Config-driven front end: synthetic data generation, identification,
//! evaluation and comparison, individually or as one pipeline.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;
