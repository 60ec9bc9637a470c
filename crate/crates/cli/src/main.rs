//! Experiment runner: each subcommand loads a JSON config, dispatches to
//! the library, and persists artifacts plus a digest manifest. Exit code 0
//! covers successful runs including soft verdicts (which set a warning);
//! nonzero is reserved for operational failures.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::parse_config;

#[derive(Parser)]
#[command(name = "pesinlab", version, about = "Reproducible entropy and domination experiments on torus systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TaskArgs {
    /// JSON experiment config; its `task` must match the subcommand.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker count (fallback: PESINLAB_WORKERS, then config).
    #[arg(long)]
    workers: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-horizon Lyapunov spectrum at a point.
    Lyap(TaskArgs),
    /// Domination certificate search for a finite-time splitting.
    Dominate(TaskArgs),
    /// Trivial-spectrum / dominated / indeterminate classification.
    Dichotomy(TaskArgs),
    /// Bowen-ball measure curve and local-entropy slope fit.
    Bowen(TaskArgs),
    /// Linear-graph propagation along a Bowen ball with dispersion trace.
    Graph(TaskArgs),
    /// Entropy lower bound versus exponent-sum upper bound, with verdict.
    Pesin(TaskArgs),
    /// Flatten reports in a run directory to plot-ready CSV series.
    Plot {
        /// Directory holding bowen.json and/or graph.json.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plot { dir } => run_plot(dir),
        Command::Lyap(args) => run_task("lyap", args),
        Command::Dominate(args) => run_task("dominate", args),
        Command::Dichotomy(args) => run_task("dichotomy", args),
        Command::Bowen(args) => run_task("bowen", args),
        Command::Graph(args) => run_task("graph", args),
        Command::Pesin(args) => run_task("pesin", args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run_task(subcommand: &str, args: &TaskArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))?;
    let mut config = parse_config(&text).map_err(anyhow::Error::new)?;
    if config.task.name() != subcommand {
        bail!(
            "config task '{}' does not match subcommand '{subcommand}'",
            config.task.name()
        );
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(workers) = resolve_workers(args.workers)? {
        config.workers = workers;
    }
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    let (manifest, summary) = runner::run_experiment(&config)?;
    println!("{subcommand}: {summary}");
    println!(
        "wrote {} file(s) + manifest.json to {}",
        manifest.files.len(),
        config.out.display()
    );
    if let Some(warning) = &manifest.warning {
        eprintln!("warning: {warning}");
    }
    Ok(())
}

/// --workers beats PESINLAB_WORKERS beats the config value.
fn resolve_workers(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(w) = flag {
        if w == 0 {
            bail!("--workers must be >= 1");
        }
        return Ok(Some(w));
    }
    match std::env::var("PESINLAB_WORKERS") {
        Ok(raw) => {
            let w: usize = raw
                .parse()
                .with_context(|| format!("PESINLAB_WORKERS must be a positive integer, got '{raw}'"))?;
            if w == 0 {
                bail!("PESINLAB_WORKERS must be >= 1");
            }
            Ok(Some(w))
        }
        Err(_) => Ok(None),
    }
}

fn run_plot(dir: &PathBuf) -> Result<()> {
    let written = runner::emit_plot_data(dir)?;
    println!("plot: wrote {} to {}", written.join(", "), dir.display());
    Ok(())
}
