use clap::{Parser, ValueEnum};
use critical_ls_cli::{run, Options, RunError, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    CouplingCheck,
    Robin,
    ErrorScaling,
    Reduce,
    EnergyFit,
    Coercivity,
    VerifyAll,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::CouplingCheck => Subcommand::CouplingCheck,
            Command::Robin => Subcommand::Robin,
            Command::ErrorScaling => Subcommand::ErrorScaling,
            Command::Reduce => Subcommand::Reduce,
            Command::EnergyFit => Subcommand::EnergyFit,
            Command::Coercivity => Subcommand::Coercivity,
            Command::VerifyAll => Subcommand::VerifyAll,
        }
    }
}

/// Numerical checks for synchronized bubble solutions of critical Schrödinger systems.
#[derive(Parser, Debug)]
#[command(name = "critical-ls", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Multiplies every tolerance.
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if !(cli.tolerance_scale > 0.0) {
        eprintln!("--tolerance-scale must be positive");
        return ExitCode::from(2);
    }
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let opts = Options { out: cli.out, tolerance_scale: cli.tolerance_scale, seed: cli.seed };
    match run(cli.command.into(), &cli.config, &opts) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}
