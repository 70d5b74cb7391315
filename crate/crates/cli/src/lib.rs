//! File formats, configuration and commands of the `slmm` tool.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod fsutil;
pub mod report;

pub use config::RunConfig;
pub use container::Container;
pub use error::{CliError, Result};
