use std::path::PathBuf;
use std::process::ExitCode;

use cascade_cli::{load_config, run, Command, Overrides};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cascade", version, about = "Experiments on Erlang-kernel Hawkes cascades")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate paths and write event logs and trajectories
    Simulate(RunArgs),
    /// Run the cascade and history simulators on shared seeds and compare
    OracleCompare(RunArgs),
    /// Compare the empirical mean of S_t with its closed form
    ValidateMoments(RunArgs),
    /// Simulate the coupled pair and the distance curve
    Couple(RunArgs),
    /// Check the drift inequality on sampled states
    DriftCheck(RunArgs),
    /// Check Jacobian invertibility and density positivity on random probes
    MinorizationCheck(RunArgs),
    /// Run a subcommand over a cartesian grid of config values
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::OracleCompare(a) => (Command::OracleCompare, a),
        Sub::ValidateMoments(a) => (Command::ValidateMoments, a),
        Sub::Couple(a) => (Command::Couple, a),
        Sub::DriftCheck(a) => (Command::DriftCheck, a),
        Sub::MinorizationCheck(a) => (Command::MinorizationCheck, a),
        Sub::Sweep(a) => (Command::Sweep, a),
    };
    let overrides = Overrides {
        seed: args.seed,
        out: args.out,
        reps: args.reps,
    };
    let result = load_config(&args.config).and_then(|config| run(command, &config, &overrides));
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("output={}", outcome.out_dir.display());
            if outcome.passed {
                println!("status=PASS");
                ExitCode::SUCCESS
            } else {
                println!("status=FAIL");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
