//! Experiment harness for `flowlab-core`: configuration files, parameter
//! sweeps with resumable CSV output, rate fits, SVG figures and the
//! `flowlab` command-line tool.

pub mod cli;
pub mod config;
pub mod io;
pub mod plot;
pub mod sweep;

pub use config::{ConfigError, ExperimentConfig};
pub use sweep::{run_sweep, ExperimentReport, RunRow, SweepOptions};
