//! Pipeline driver: configuration, run directories and the subcommands that
//! move artifacts between pipeline stages.

pub mod commands;
pub mod config;
pub mod error;
pub mod run;

pub use config::RunConfig;
pub use error::CliError;
pub use run::RunDir;
