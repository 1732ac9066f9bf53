//! Library face of the `hawk` binary: experiment configuration and the
//! subcommand implementations, exposed so integration tests can drive
//! commands directly.

pub mod ablate;
pub mod commands;
pub mod config;

pub use config::ExperimentConfig;
