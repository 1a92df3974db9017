//! Command-line pipeline for the uncertainty-aware GGD-GAN: dataset
//! simulation, training, MC-dropout inference and evaluation.

pub mod args;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod output;

pub use args::{run, Cli, Command};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
