mod commands;
mod config;
mod output;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Bent-ray tracing, linking, travel-time inversion and Green's function parameters.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fish-eye accuracy sweep: metrics.csv and distances.csv.
    ValidateFisheye(Common),
    /// Trace one ray: trajectory.csv.
    Trace(Common),
    /// Link emitter-receiver pairs: links.csv.
    Link(Common),
    /// Rasterise a phantom and synthesise travel times: tofs.csv, truth.rtf.
    Synth(Common),
    /// Travel-time inversion: speed_NNN.rtf per outer iteration and run_log.csv.
    Reconstruct(Common),
    /// Green's function parameters along linked rays: greens.csv.
    Greens(Common),
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides `threads` in the config; default all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn run(cli: Cli) -> Result<commands::Failures> {
    let (Command::ValidateFisheye(c)
    | Command::Trace(c)
    | Command::Link(c)
    | Command::Synth(c)
    | Command::Reconstruct(c)
    | Command::Greens(c)) = &cli.command;
    let cfg = config::load(&c.config)?;
    cfg.check_inputs()?;
    if let Some(n) = c.threads.or(cfg.threads) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot start the thread pool")?;
    }
    let out = c.out.clone().or_else(|| cfg.out.as_ref().map(|p| cfg.resolve(p))).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let seed = c.seed.or(cfg.seed).unwrap_or(0);
    match &cli.command {
        Command::ValidateFisheye(_) => commands::validate_fisheye(&cfg, &out),
        Command::Trace(_) => commands::trace_ray(&cfg, &out),
        Command::Link(_) => commands::link(&cfg, &out),
        Command::Synth(_) => commands::synth(&cfg, &out, seed),
        Command::Reconstruct(_) => commands::reconstruct_cmd(&cfg, &out),
        Command::Greens(_) => commands::greens(&cfg, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("{} partial failure(s):", failures.len());
            for f in &failures {
                eprintln!("  {f}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
