//! Command-line front end: scenario files, run artifacts, plots and report
//! tables.

pub mod artifacts;
pub mod commands;
pub mod error;
pub mod scenario_file;
pub mod svg;

pub use commands::{execute, Cli};
pub use error::CliError;
