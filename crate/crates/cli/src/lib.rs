//! Command-line front end: configuration files, CSV formats and the
//! subcommands of the `gcstiff` binary.

pub mod app;
pub mod config;
pub mod output;
