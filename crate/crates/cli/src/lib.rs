//! Command-line front end for the `topodeg` library.

pub mod config;
pub mod run;
pub mod spec;

pub use config::{Command, ConfigError, RunConfig};
pub use run::run;
