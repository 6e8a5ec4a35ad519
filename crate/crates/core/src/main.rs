//! Thin CLI over the experiment pipelines.

use clap::{Args, Parser, Subcommand};
use stacknash::config::RunConfig;
use stacknash::experiment::{run_experiment, ExperimentName};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "stacknash",
    about = "Hierarchical control experiments for a coupled degenerate parabolic system",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (also via STACKNASH_OUT; defaults to run.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Uncontrolled forward solve of the coupled system.
    Forward(RunArgs),
    /// Follower Nash equilibrium for a fixed leader control.
    Nash(RunArgs),
    /// Penalized leader minimization along the epsilon ladder.
    LeaderSweep(RunArgs),
    /// Weight construction and inequality probes.
    CarlemanProbe(RunArgs),
    /// Full nonlinear leader + followers pipeline.
    Full(RunArgs),
}

fn run(name: ExperimentName, args: &RunArgs) -> stacknash::Result<serde_json::Value> {
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out_dir = args
        .out
        .clone()
        .or_else(|| std::env::var_os("STACKNASH_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.run.out_dir));
    run_experiment(name, &cfg, &out_dir, args.seed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Forward(a) => (ExperimentName::Forward, a),
        Command::Nash(a) => (ExperimentName::Nash, a),
        Command::LeaderSweep(a) => (ExperimentName::LeaderSweep, a),
        Command::CarlemanProbe(a) => (ExperimentName::CarlemanProbe, a),
        Command::Full(a) => (ExperimentName::Full, a),
    };
    match run(name, args) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            ExitCode::SUCCESS
        }
        Err(err) => {
            let (class, code) = err.class();
            eprintln!("error[{class}]: {err}");
            ExitCode::from(code as u8)
        }
    }
}
