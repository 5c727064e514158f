//! Command-line front end: argument parsing, layered configuration and the
//! subcommands that drive the library.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

use std::path::PathBuf;

pub use args::Cli;
pub use config::{RunConfig, FROZEN_CONFIG, OUTPUT_ROOT_ENV};
pub use error::{CliError, CliResult};

/// Resolves the configuration for `cli` without running anything.
pub fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    match (&cli.from_config, &cli.command) {
        (Some(path), _) => {
            let mut cfg = RunConfig::load(path).map_err(|e| match e.message.starts_with("file not found") {
                true => CliError::missing_input("--from-config", path),
                false => e,
            })?;
            if let Some(out) = &cli.out {
                cfg.output_dir = Some(std::path::absolute(out).unwrap_or_else(|_| PathBuf::from(out)));
            }
            if cfg.output_dir.is_none() {
                return Err(CliError::config(format!("{} records no output_dir", path.display())));
            }
            Ok(cfg)
        }
        (None, Some(command)) => config::resolve(command),
        (None, None) => Err(CliError::config("no subcommand given; see --help")),
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    commands::execute(&resolve(cli)?)
}
