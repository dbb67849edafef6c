//! Command-line orchestration for the cousinforge pipeline: configuration,
//! clip bundle I/O and the subcommand implementations.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
