//! Command-line front end for the `qjl` key-cache quantizer.
//!
//! Exit codes: 0 success, 1 other failure, 2 bad configuration or flags,
//! 3 unreadable, unwritable or inconsistent files, 4 failed validation.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use args::{Cli, Command};
use error::{CliError, Result};

pub use config::RunConfig;

/// Runs one parsed command, inside a dedicated thread pool when `--threads`
/// is given.
pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(CliError::Config("--threads must be >= 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Other(format!("thread pool: {e}")))?
            .install(|| dispatch(cli.command)),
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => commands::gen::run(&a).map(drop),
        Command::Quantize(a) => commands::quantize::run(&a).map(drop),
        Command::Decode(a) => commands::decode::run(&a).map(drop),
        Command::Validate(a) => commands::validate::run(&a).map(drop),
        Command::Bench(a) => commands::bench::run(&a).map(drop),
        Command::Config(a) => {
            let config = a.config.resolve()?;
            match &a.out {
                Some(path) => config.save(path),
                None => {
                    print!("{}", config.to_toml());
                    Ok(())
                }
            }
        }
    }
}
