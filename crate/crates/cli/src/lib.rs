//! Library side of the `gdlab` command-line tool.

pub mod commands;
pub mod config;
pub mod task;
