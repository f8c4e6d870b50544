use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hdfp_cli::{run, Command, Overrides};

#[derive(Parser)]
#[command(name = "hdfp", version, about = "High-dimensional functional regression: fitting, testing and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the penalized model and report coefficients and diagnostics.
    Fit(Common),
    /// Fit, then run the Wald test of the configured hypothesis.
    Test(Common),
    /// Cross-validate the basis size and penalty level.
    Cv(Common),
    /// Run a seeded Monte-Carlo study of a simulated scenario.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads; overrides the config file.
    #[arg(long, env = "HDFP_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Fit(a) => (Command::Fit, a),
        Cmd::Test(a) => (Command::Test, a),
        Cmd::Cv(a) => (Command::Cv, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
    };
    let overrides = Overrides {
        seed: args.seed,
        reps: args.reps,
        threads: args.threads,
        out: args.out,
    };
    match run(command, &args.config, &overrides) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hdfp {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
