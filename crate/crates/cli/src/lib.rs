//! Operator surface for the `mug` binary: run configuration and commands.

pub mod commands;
pub mod config;

pub use commands::{cmd_doctor, cmd_edit_gate, cmd_report, cmd_run, cmd_simulate, EXIT_FATAL, EXIT_OK, EXIT_PARTIAL};
pub use config::{Overrides, RunConfig};
