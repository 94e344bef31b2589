//! Experiment harness for entropic fictitious play: problem builders,
//! configuration, run artifacts and the acceptance checks.

pub mod config;
pub mod datasets;
pub mod error;
pub mod io;
pub mod run;
pub mod verify;

pub use error::{CliError, CliResult};
