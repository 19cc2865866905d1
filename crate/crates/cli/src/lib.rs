//! Library behind the `posepyr` command-line tool.

pub mod commands;
pub mod config;
pub mod evaluate;
pub mod plot;
pub mod train;

pub use config::RunConfig;
