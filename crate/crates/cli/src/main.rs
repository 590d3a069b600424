//! `nettemporal`: batch pipeline from dataset generation to evaluation reports.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 missing input artifact,
//! 4 runtime or training failure.

mod commands;
mod config;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nettemporal::models::Architecture;

use crate::config::PipelineConfig;
use crate::failure::Failure;
use crate::manifest::Outputs;

#[derive(Debug, Parser)]
#[command(name = "nettemporal", version, about = "Network time-series forecasting pipeline")]
struct Cli {
    /// TOML pipeline configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `out` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restricts the run to one architecture.
    #[arg(long, global = true, value_parser = parse_arch)]
    arch: Option<Architecture>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Writes a synthetic dataset and its JSON sidecar.
    Generate,
    /// Trend, daily and weekly components of every series.
    Decompose,
    /// Correlation matrix and cluster assignments from the training split.
    Cluster,
    /// Trains each architecture at the first feasible grid point.
    Train,
    /// Grid search over horizons, sequence lengths and hyperparameters.
    Sweep,
    /// Scores trained checkpoints on the test split.
    Evaluate,
    /// Tables and figures from a finished sweep.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Decompose => "decompose",
            Command::Cluster => "cluster",
            Command::Train => "train",
            Command::Sweep => "sweep",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
        }
    }
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: nettemporal::Error| e.to_string())
}

fn run(cli: &Cli) -> Result<PathBuf, (Failure, Option<PathBuf>)> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
    .and_then(|c| c.finish(cli.seed, cli.out.clone(), cli.arch))
    .map_err(|f| (f, None))?;
    let name = cli.command.name();
    let mut out = Outputs::new(&cfg.out, name).map_err(|f| (f, None))?;
    let result = match cli.command {
        Command::Generate => commands::generate(&cfg, &mut out),
        Command::Decompose => commands::decompose_cmd(&cfg, &mut out),
        Command::Cluster => commands::cluster(&cfg, &mut out),
        Command::Train => commands::train(&cfg, &mut out),
        Command::Sweep => commands::sweep(&cfg, &mut out),
        Command::Evaluate => commands::evaluate(&cfg, &mut out),
        Command::Report => commands::report(&cfg, &mut out),
    };
    if let Err(mut f) = result {
        if let Some(log) = f.pending_log.take() {
            let mut buf = Vec::new();
            if log.write_jsonl(&mut buf).is_ok() {
                if let Ok(p) = out.write(format!("{name}.failed.runlog.jsonl"), buf) {
                    f.runlog = Some(p);
                }
            }
        }
        let _ = out.finish(&cfg);
        return Err((f, Some(cfg.out.clone())));
    }
    out.finish(&cfg).map_err(|f| (f, None))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NETTEMPORAL_LOG", "info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(manifest) => {
            log::info!("manifest: {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err((f, _)) => {
            eprintln!("{f}");
            ExitCode::from(f.code() as u8)
        }
    }
}
