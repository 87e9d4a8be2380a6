//! Library side of the `drkm` command-line tool: configuration schema,
//! command implementations and exit-code mapping.

pub mod config;
pub mod error;
pub mod metrics;
pub mod run;

pub use config::RunConfig;
pub use error::CliError;
