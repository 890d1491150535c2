//! `racesim` command-line pipeline: synthetic data, preparation, fitting,
//! simulation, lane experiments, profile clustering and jockey ratings.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "racesim", version, about = "Frame-level race models and simulation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; every section is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic field, track outline and tracking table.
    Synth,
    /// Project, clean and featurize the tracking table.
    Prepare,
    /// Fit the forward and lateral models.
    Fit,
    /// Placement probabilities from replayed race states.
    Simulate {
        #[arg(long)]
        race: Option<String>,
        /// Frames after the race start; repeat or comma-separate for a series.
        #[arg(long, value_delimiter = ',')]
        frame: Vec<i64>,
        /// Also start every N frames until the race ends.
        #[arg(long)]
        every: Option<i64>,
        /// Start from a grid built from the configured lane entrants.
        #[arg(long, conflicts_with_all = ["race", "frame", "every"])]
        grid: bool,
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Every lane assignment of a field.
    Counterfactual {
        /// Take the field from this race when no entrants are configured.
        #[arg(long)]
        race: Option<String>,
        #[arg(long)]
        sims: Option<usize>,
    },
    /// Cluster horse speed profiles.
    Profiles {
        #[arg(long)]
        clusters: Option<usize>,
    },
    /// Rank jockeys by their forward effect.
    Ratings,
}

pub fn resolve_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(dir) = &global.output_dir {
        config.paths.output_dir = Some(dir.clone());
    }
    Ok(config)
}

/// Runs one command and returns the files it wrote.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    if let Some(n) = cli.global.workers {
        // a pool may already exist when called repeatedly in one process
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::debug!("worker pool already configured: {e}");
        }
    }
    let config = resolve_config(&cli.global)?;
    commands::dispatch(&config, &cli.command)
}
