//! `vvlab` command-line driver.
//!
//! Exit codes: 0 ok, 2 configuration, 3 assumptions, 4 resolution, 5 family.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;
use config::{parse_eps_list, RunConfig};
use output::Sink;

#[derive(Parser)]
#[command(name = "vvlab", version, about = "Vanishing-viscosity transport control laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default `vvlab-out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated ε values, overriding `eps_list`.
    #[arg(long, global = true)]
    eps: Option<String>,
    /// Named field preset: example5-minus, example5-plus, flat.
    #[arg(long, global = true)]
    preset: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Control-time bounds T₁, T₁₄, T₁₅, T₁₆ and the G₁₄ table.
    Bounds,
    /// Spectra with Weyl, gap, and localization reports per ε.
    Spectrum,
    /// Localization diagnostics only.
    Localization,
    /// Two-phase moment null control and its cost.
    Control,
    /// Gramian cost across ε with exponent fit and envelope verdict.
    CostScan,
    /// Bounds and spectra for the closed-form sign − example.
    Example5,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Bounds => "bounds",
            Command::Spectrum => "spectrum",
            Command::Localization => "localization",
            Command::Control => "control",
            Command::CostScan => "cost-scan",
            Command::Example5 => "example5",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &cli.preset {
        cfg.preset = Some(p.clone());
    }
    if let Some(e) = &cli.eps {
        cfg.eps_list = Some(parse_eps_list(e)?);
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if matches!(cli.command, Command::Example5) {
        commands::example5_defaults(&mut cfg);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("vvlab-out"));
    let mut sink = Sink::new(&dir)?;
    let result = match cli.command {
        Command::Bounds => commands::bounds(&cfg, &mut sink),
        Command::Spectrum => commands::spectrum(&cfg, &mut sink),
        Command::Localization => commands::localization(&cfg, &mut sink),
        Command::Control => commands::control(&cfg, &mut sink),
        Command::CostScan => commands::cost_scan_cmd(&cfg, &mut sink),
        Command::Example5 => commands::example5(&cfg, &mut sink),
    };
    sink.finish(cli.command.name(), &cfg)?;
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
