//! Command-line front end: configuration files, artifacts and subcommands.

pub mod artifact;
pub mod commands;
pub mod config;
