//! The `hips` command-line pipeline: fit, synth, segment, evaluate, stats
//! and phantom subcommands over the `hips-core` library.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use cli::{command, parse_from, Cli};
pub use commands::run;
pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
