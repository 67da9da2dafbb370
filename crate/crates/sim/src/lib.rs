//! File formats, configuration and experiment runners for `hybridprec-core`.

pub mod config;
pub mod experiments;
pub mod model_io;
pub mod output;
pub mod plot;

pub use config::{ConfigError, ExperimentConfig, Kind};
pub use experiments::{run_experiment, RunError, RunReport};
