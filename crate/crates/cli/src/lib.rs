//! Command-line front end: configuration, WAV I/O and the subcommands.

pub mod commands;
pub mod config;
pub mod wav;
