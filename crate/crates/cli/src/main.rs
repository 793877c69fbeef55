//! Command-line front end: kernel gains, simulations, verification and
//! parameter sweeps, all written as CSV.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::VerificationFailed;
use crate::config::{FileConfig, InvalidConfig, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "beamstab", version, about = "Boundary stabilization of an anti-damped Timoshenko beam")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the kernel equations and write gains.csv and phi.csv.
    Gains(Common),
    /// Run the beam in open or closed loop and write snapshots, energy and controls.
    Simulate(Common),
    /// Run the invariant checks and print one line per check.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Previously written gains.csv to check against a fresh solve.
        #[arg(long)]
        gains: Option<PathBuf>,
    },
    /// One kernel solve and closed-loop run per (delta1, delta2) pair.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Pairs as `d1:d2,d1:d2,...`.
        #[arg(long)]
        pairs: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file with any of epsilon, mu, a, theta, xi, delta1, delta2, n, dt_cfl, t_final.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `open` or `closed`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    cfl: Option<f64>,
    #[arg(long = "t-final")]
    t_final: Option<f64>,
    #[arg(long)]
    delta1: Option<f64>,
    #[arg(long)]
    delta2: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn resolve(common: &Common, pairs: Option<String>) -> anyhow::Result<RunConfig> {
    let file = match &common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let ov = Overrides {
        mode: common.mode.clone(),
        n: common.n,
        cfl: common.cfl,
        t_final: common.t_final,
        delta1: common.delta1,
        delta2: common.delta2,
        pairs,
    };
    RunConfig::resolve(file, &ov, common.out.clone())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gains(c) => commands::gains(&resolve(&c, None)?),
        Command::Simulate(c) => commands::simulate(&resolve(&c, None)?),
        Command::Verify { common, gains } => commands::verify(&resolve(&common, None)?, gains.as_deref()),
        Command::Sweep { common, pairs } => commands::sweep(&resolve(&common, pairs)?),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use beamstab::Error as E;
    if err.downcast_ref::<InvalidConfig>().is_some() {
        return 2;
    }
    if err.downcast_ref::<VerificationFailed>().is_some() {
        return 4;
    }
    match err.downcast_ref::<E>() {
        Some(E::NonConvergence { .. } | E::NonFiniteState { .. } | E::NonPositiveEnergy { .. } | E::TooFewSamples { .. }) => 3,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
