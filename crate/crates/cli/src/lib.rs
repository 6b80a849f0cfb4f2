//! Experiment runner for the reduced-process simulator.

pub mod config;
pub mod report;
pub mod run;

pub use config::{parse_config, ConfigError, OutputFormat, RunConfig};
pub use report::{emit_report, Row};
pub use run::{run_scenario, write_outputs, RunError, RunResult};
