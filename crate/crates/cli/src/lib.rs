//! Command implementations behind the `ttvbake` binary.

pub mod commands;
pub mod config;
pub mod dataset;
