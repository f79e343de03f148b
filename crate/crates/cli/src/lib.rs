//! Batch front-end for the ELAA estimation toolkit: configuration files,
//! single-shot and Monte-Carlo runs, self-tests and figures.

pub mod config;
pub mod plots;
pub mod run;

pub use config::{parse_config, parse_config_str, ConfigError, Experiment};
pub use run::{run, Mode, RunError, RunSpec};
