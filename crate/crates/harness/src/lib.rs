//! Dataset ingestion, experiment orchestration and the built-in validation
//! suite behind the `adfs-lab` command.

pub mod config;
pub mod experiment;
pub mod libsvm;
pub mod synth;
pub mod validate;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, HarnessError};
