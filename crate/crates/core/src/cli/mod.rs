//! Command-line entry points.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::Context;
pub use config::ExperimentConfig;

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "lsbo", version, about = "Latent space Bayesian optimization with latent-consistency-aware VAEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; for `run` also the only seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root (overrides $LSBO_OUT and the config file).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one VAE per γ and one per convergence-study dimension.
    Pretrain(#[command(flatten)] Common),
    /// Consistency scores on a grid or sample set, with cycle trajectories.
    ConsistencyMap(#[command(flatten)] Common),
    /// Every (method, seed) optimization cell plus the summary.
    Run {
        #[command(flatten)]
        common: Common,
        /// Stop each cell after this many new iterations; rerun to resume.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Cycles to convergence against latent dimension.
    ConvergenceStudy(#[command(flatten)] Common),
    /// Fraction of distinct generated instances per cell.
    Diversity(#[command(flatten)] Common),
    /// Print the effective configuration as TOML.
    ShowConfig(#[command(flatten)] Common),
}

fn context(c: &Common) -> Result<Context> {
    let cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Context::new(cfg, c.seed, c.out.as_deref())
}

/// Execute a parsed command line and return the process exit code.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Pretrain(c) => {
            for p in commands::pretrain(&context(&c)?)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::ConsistencyMap(c) => {
            for p in commands::consistency_map(&context(&c)?)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::Run { common, stop_after } => {
            let ctx = context(&common)?;
            let report = commands::run(&ctx, stop_after)?;
            for h in &report.histories {
                println!(
                    "{}-{}: {} evaluations, best {}",
                    h.method.as_str(),
                    h.seed,
                    h.records.len(),
                    h.records.last().map_or(f64::NAN, |r| r.best_so_far)
                );
            }
            println!("{}", ctx.run_dir().display());
            Ok(report.exit_code())
        }
        Command::ConvergenceStudy(c) => {
            let study = commands::convergence_study(&context(&c)?)?;
            for s in &study.summary {
                println!(
                    "d={} r={} median_iterations={} converged={}/{}",
                    s.dim, s.radius, s.median_iterations, s.converged, s.starts
                );
            }
            Ok(0)
        }
        Command::Diversity(c) => {
            for r in commands::diversity(&context(&c)?)? {
                let seed = r.seed.map_or_else(|| "all".to_string(), |s| s.to_string());
                println!("{} {seed}: {:.3} of {}", r.method.as_str(), r.diversity, r.generated);
            }
            Ok(0)
        }
        Command::ShowConfig(c) => {
            print!("{}", context(&c)?.config.to_toml()?);
            Ok(0)
        }
    }
}
