//! Command-line front end: experiment runner, checkpoints, metrics files and
//! the analysis subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
