//! Scenario loading and subcommand logic behind the `cdf-sim` binary.

pub mod commands;
pub mod scenario;
