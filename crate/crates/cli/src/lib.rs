//! Experiment runner for taskmesh: config parsing, repeated runs on the
//! simulator, threads or localhost TCP, CSV output and offline trace checks.

pub mod commands;
pub mod config;
pub mod exec;
pub mod stats;
pub mod table;

pub use commands::{cmd_calibrate, cmd_check, cmd_run, cmd_sweep, cmd_tmf_dump, Axis, Verdict};
pub use config::{ConfigError, ExperimentConfig, Transport};
pub use exec::{CliError, Launcher};
