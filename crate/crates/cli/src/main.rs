//! Command-line driver: training, audits, basis inspection, simulation and sweeps.
//!
//! Exit codes: 0 success, 1 audit failure, 2 usage or configuration error,
//! 3 numerical abort.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "equimarl", version, about = "Rotation-equivariant distributed multi-agent policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy with PPO and write its learning curve and checkpoint.
    Train(TrainArgs),
    /// Check a checkpoint for equivariance, environment symmetry and decentralized equality.
    Audit(AuditArgs),
    /// Compute an equivariant basis between two representations and compare with the exact rank.
    Basis(BasisArgs),
    /// Roll out a random or trained policy and dump trajectories.
    Simulate(SimulateArgs),
    /// Train over a grid of learning rates and report the best per method.
    Sweep(SweepArgs),
}

/// Options shared by every command that reads a run configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the method: equivariant, standard_mpn, aug_stochastic or aug_full.
    #[arg(long)]
    method: Option<String>,
    /// Overrides the environment: wildlife or traffic.
    #[arg(long)]
    env: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides the number of environment steps.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sampled states per check.
    #[arg(long, default_value_t = 50)]
    samples: usize,
    /// Also fail when a non-equivariant network breaks the symmetry.
    #[arg(long)]
    strict: bool,
    /// Group elements to test: c4 (all rotations) or identity.
    #[arg(long, default_value = "c4")]
    group: String,
    /// Drone count when the environment is inferred from the checkpoint.
    #[arg(long, default_value_t = 3)]
    agents: usize,
}

#[derive(Args, Debug)]
pub struct BasisArgs {
    /// Representation pair such as `regular->regular` or `rotation+regular->regular`.
    spec: String,
    /// Seed for the random projections.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// `random` or a checkpoint directory.
    #[arg(long, default_value = "random")]
    policy: String,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    /// Run the checkpoint policy through the decentralized runtime.
    #[arg(long)]
    distributed: bool,
    /// Drone count when the environment is inferred from the checkpoint.
    #[arg(long, default_value_t = 3)]
    agents: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated methods.
    #[arg(long, default_value = "standard_mpn,aug_stochastic,equivariant")]
    methods: String,
    /// Comma-separated learning rates; defaults to the six-rate grid.
    #[arg(long)]
    rates: Option<String>,
    /// Number of seeds per rate, starting at the configured seed.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Overrides the number of environment steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Curve points averaged when scoring a run.
    #[arg(long, default_value_t = 5)]
    window: usize,
}

/// How a command failed, which determines the exit code.
#[derive(Debug)]
pub enum Failure {
    AuditFailed(String),
    Usage(anyhow::Error),
    Numerical(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Audit(a) => commands::audit(a),
        Command::Basis(a) => commands::basis(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::AuditFailed(msg)) => {
            eprintln!("audit failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical abort: {e:#}");
            ExitCode::from(3)
        }
    }
}
