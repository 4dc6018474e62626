//! Experiment runner for the `svsoftmax-core` losses.
//!
//! Reads an experiment configuration, runs gradient checks, trains every
//! configured loss on a shared synthetic dataset, evaluates the embeddings and
//! writes CSV, JSON and binary artifacts. See [`commands`] for the output
//! layout and [`config`] for the file format.

pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod model;

pub use config::ExperimentConfig;
pub use error::{CliError, ConfigError};
