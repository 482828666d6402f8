use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dmdkit_cli::{config::parse_bfit, execute, CliError, Command, Settings};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Synth,
    Run,
    Loo,
    Rom,
    Slice,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Dynamic mode decomposition batch runs.
#[derive(Debug, Parser)]
#[command(name = "dmdkit", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Truncation rank, or `auto`.
    #[arg(long)]
    rank: Option<String>,
    #[arg(long, value_enum)]
    tlsq: Option<Switch>,
    #[arg(long = "mean-removal", value_enum)]
    mean_removal: Option<Switch>,
    /// `first` or `multi:<k>`.
    #[arg(long)]
    bfit: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Snapshot file (`.dmds` or `.csv`).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Any configuration key, e.g. `--set loo_trials=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = match &cli.config {
        Some(p) => Settings::from_file(p).map_err(|e| match e {
            CliError::Io(io) => CliError::Config(format!("cannot read {}: {io}", p.display())),
            other => other,
        })?,
        None => Settings::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        s.set(k.trim(), v.trim());
    }
    let onoff = |v: Switch| match v {
        Switch::On => "on",
        Switch::Off => "off",
    };
    if let Some(seed) = cli.seed {
        s.set("seed", &seed.to_string());
    }
    if let Some(r) = &cli.rank {
        s.set("rank", r);
    }
    if let Some(v) = cli.tlsq {
        s.set("tlsq", onoff(v));
    }
    if let Some(v) = cli.mean_removal {
        s.set("mean_removal", onoff(v));
    }
    if let Some(b) = &cli.bfit {
        parse_bfit(b)?;
        s.set("bfit", b);
    }
    if let Some(o) = &cli.out {
        s.set("out", &o.to_string_lossy());
    }
    if let Some(i) = &cli.input {
        s.set("input", &i.to_string_lossy());
    }
    Ok(s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Synth => Command::Synth,
        Cmd::Run => Command::Run,
        Cmd::Loo => Command::Loo,
        Cmd::Rom => Command::Rom,
        Cmd::Slice => Command::Slice,
    };
    let result = settings(&cli)
        .and_then(|s| s.resolve())
        .and_then(|cfg| execute(command, &cfg, &mut std::io::stdout().lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dmdkit {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
