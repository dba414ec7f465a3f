use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use empirical_saddle::runner::{run, ExperimentKind, RunOptions};

#[derive(Parser)]
#[command(name = "esp", version, about = "Empirical saddle point experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generalization measures across sample sizes.
    RateSweep(RunArgs),
    /// Leave-one-out stability trials.
    Stability(RunArgs),
    /// Policy regret of the regularized empirical MDP policy.
    Mdp(RunArgs),
    /// Epsilon-Nash gaps of regularized empirical equilibria.
    Game(RunArgs),
    /// Solve one saddle-point problem.
    Solve(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `master_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::RateSweep(a) => (ExperimentKind::RateSweep, a),
        Command::Stability(a) => (ExperimentKind::Stability, a),
        Command::Mdp(a) => (ExperimentKind::Mdp, a),
        Command::Game(a) => (ExperimentKind::Game, a),
        Command::Solve(a) => (ExperimentKind::Solve, a),
    };
    let outcome = run(&RunOptions {
        kind,
        config_path: args.config,
        out_dir: args.out,
        threads: args.threads,
        seed: args.seed,
    });
    let m = &outcome.manifest;
    for s in &m.suites {
        println!("{} {}: {}", if s.passed { "PASS" } else { "FAIL" }, s.name, s.detail);
    }
    if let Some(msg) = &m.message {
        eprintln!("esp {}: {msg}", m.experiment);
    }
    ExitCode::from(outcome.exit_code as u8)
}
