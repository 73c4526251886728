//! Experiment runner for attention-pooled ensemble forecasts.
//!
//! This crate adds everything that needs `std` on top of `attnpool-core`:
//! the TOML configuration, CSV and JSON file formats, parameter checkpoints,
//! output-directory handling with run manifests, the two experiment drivers,
//! and the `attnpool` command-line tool.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod covid_run;
pub mod io;
pub mod lorenz_run;
pub mod output;

pub use config::{ConfigError, ConfigErrors, ExperimentConfig, Plan};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Data(#[from] io::DataError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Core(#[from] attnpool_core::Error),
    #[error("{0}")]
    Failed(String),
}

impl RunError {
    /// 1 for configuration problems, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            _ => 2,
        }
    }
}
