//! Command-line front end for the reduced-order modeling pipeline:
//! configuration, file formats and report emission.

pub mod commands;
pub mod config;
pub mod svg;

pub use commands::run;
pub use config::{parse_args, usage, Command, RunConfig};
