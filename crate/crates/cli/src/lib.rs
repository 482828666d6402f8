//! Batch front end: `synth`, `run`, `loo`, `rom` and `slice` commands driven by
//! a flat configuration file.

pub mod commands;
pub mod config;

use std::io::Write;

use dmdkit::DmdError;
use thiserror::Error;

pub use config::{RunConfig, Settings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Dmd(#[from] DmdError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 configuration or infeasible request, 3 numerical failure, 4 I/O or
    /// unreadable data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 4,
            CliError::Dmd(e) if e.is_numerical() => 3,
            CliError::Dmd(e) if e.is_io() => 4,
            CliError::Dmd(DmdError::Format(_) | DmdError::Json(_) | DmdError::NonFinite { .. }) => 4,
            CliError::Dmd(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Run,
    Loo,
    Rom,
    Slice,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Run => "run",
            Command::Loo => "loo",
            Command::Rom => "rom",
            Command::Slice => "slice",
        }
    }
}

/// Runs one command; progress lines go to `log`.
pub fn execute(command: Command, cfg: &RunConfig, log: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Synth => commands::synth(cfg, log),
        Command::Run => commands::run(cfg, log),
        Command::Loo => commands::loo(cfg, log),
        Command::Rom => commands::rom(cfg, log),
        Command::Slice => commands::slice(cfg, log),
    }
}
