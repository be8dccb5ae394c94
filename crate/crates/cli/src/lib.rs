//! Command-line front end: configuration, run directories and the
//! solve / optimize / sweep / robustness commands.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};
use crate::output::RunDir;

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "DICODESIGN_OUT";
const DEFAULT_OUT: &str = "dicodesign-out";

#[derive(Debug, Parser)]
#[command(name = "dicodesign", version, about = "Directed-information co-design of intrinsic dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve iLQG at the configured design and simulate one closed-loop rollout.
    Solve(CommonArgs),
    /// Run the co-design loop from the configured design.
    Optimize(CommonArgs),
    /// Solve on a grid of designs and record cost and directed information.
    Sweep(CommonArgs),
    /// Closed-loop rollouts under increasing noise for one or more designs.
    Robustness(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Optimize(_) => "optimize",
            Command::Sweep(_) => "sweep",
            Command::Robustness(_) => "robustness",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Solve(a) | Command::Optimize(a) | Command::Sweep(a) | Command::Robustness(a) => a,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the environment variable and the config.
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Skip SVG plots.
    #[arg(long)]
    pub no_plots: bool,
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<dicodesign::Error>() {
        Some(
            dicodesign::Error::Config(_)
            | dicodesign::Error::Dimension { .. }
            | dicodesign::Error::DesignOutOfBounds { .. }
            | dicodesign::Error::UnknownSystem(_),
        ) => 2,
        _ => 1,
    }
}

/// Runs one command and returns its exit status.
pub fn run(cli: Cli) -> Result<i32> {
    let args = cli.command.args();
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    // The pool may already exist when called more than once in a process.
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(args.workers).build_global() {
        log::debug!("keeping the existing worker pool: {e}");
    }
    let workers = rayon::current_num_threads();

    let system = config.build_system()?;
    let ctx = commands::Context {
        config_hash: config.hash(),
        system,
        config,
        plots: !args.no_plots,
    };
    let mut run = RunDir::create(out)?;
    log::info!("{} -> {}", cli.command.name(), run.path().display());
    let status = match cli.command {
        Command::Solve(_) => commands::solve(&ctx, &mut run),
        Command::Optimize(_) => commands::optimize(&ctx, &mut run),
        Command::Sweep(_) => commands::sweep(&ctx, &mut run),
        Command::Robustness(_) => commands::robustness(&ctx, &mut run),
    };
    let status = match status {
        Ok(code) => code,
        Err(e) => {
            // Keep a manifest for failed runs too, recording the error.
            run.warn(format!("{e:#}"));
            run.finish(cli.command.name(), ctx.config_hash.clone(), ctx.config.seed, workers)?;
            return Err(e);
        }
    };
    run.finish(cli.command.name(), ctx.config_hash.clone(), ctx.config.seed, workers)?;
    Ok(status)
}
