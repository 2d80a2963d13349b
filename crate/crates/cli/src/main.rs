mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "cadrl", version, about = "Learned two-agent collision avoidance: data, training, benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Key-value config file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ORCA pairs and write the supervised training set.
    GenDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectories: Option<usize>,
    },
    /// Supervised initialization followed by deep V-learning.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset written by gen-dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Regenerate the ORCA dataset instead of reading one.
        #[arg(long)]
        from_scratch: bool,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Compare ORCA, CADRL and constrained CADRL on seeded cases.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        agents: Option<usize>,
        #[arg(long)]
        cases: Option<usize>,
        /// Side of the square domain (m).
        #[arg(long)]
        domain: Option<f64>,
        /// Run the two-agent crossing sweep over 0..=180 degrees instead.
        #[arg(long)]
        crossing_sweep: bool,
    },
    /// Run one named scenario and write its trajectories.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: String,
        /// Crossing angle (degrees) for the crossing scenario.
        #[arg(long, default_value_t = 90.0)]
        alpha: f64,
        #[arg(long, default_value = "cadrl")]
        policy: String,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut o = Overrides::new();
    if let Some(path) = &common.config {
        o.apply_file(path)?;
    }
    for s in &common.sets {
        let (k, v) = s
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got '{s}'"))?;
        o.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        o.set("seed", &seed.to_string())?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            o.set(k, v)?;
        }
    }
    o.resolve()
}

fn setup(common: &Common) -> Result<()> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring thread pool")?;
    }
    std::fs::create_dir_all(&common.out_dir)
        .with_context(|| format!("creating {}", common.out_dir.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDataset { common, trajectories } => {
            setup(&common)?;
            let cfg = resolve(&common, &[("dataset_trajectories", trajectories.map(|v| v.to_string()))])?;
            commands::gen_dataset(&common, &cfg)
        }
        Command::Train {
            common,
            dataset,
            from_scratch,
            resume,
            episodes,
        } => {
            setup(&common)?;
            let cfg = resolve(&common, &[("episodes", episodes.map(|v| v.to_string()))])?;
            commands::train(&common, &cfg, dataset.as_deref(), from_scratch, resume.as_deref())
        }
        Command::Benchmark {
            common,
            weights,
            agents,
            cases,
            domain,
            crossing_sweep,
        } => {
            setup(&common)?;
            let cfg = resolve(
                &common,
                &[
                    ("bench_agents", agents.map(|v| v.to_string())),
                    ("bench_cases", cases.map(|v| v.to_string())),
                    ("bench_domain", domain.map(|v| v.to_string())),
                ],
            )?;
            commands::benchmark(&common, &cfg, weights.as_deref(), crossing_sweep)
        }
        Command::Simulate {
            common,
            scenario,
            alpha,
            policy,
            weights,
        } => {
            setup(&common)?;
            let cfg = resolve(&common, &[])?;
            commands::simulate(&common, &cfg, &scenario, alpha, &policy, weights.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
