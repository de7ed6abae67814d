use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use projlift::runner::{self, Command, ExperimentConfig, RunOutcome, SEED_ENV};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Lyapunov,
    Fkh,
    Lift,
    Drift,
    Grassmannian,
    Acceptance,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Lyapunov => Command::Lyapunov,
            Cmd::Fkh => Command::Fkh,
            Cmd::Lift => Command::Lift,
            Cmd::Drift => Command::Drift,
            Cmd::Grassmannian => Command::Grassmannian,
            Cmd::Acceptance => Command::Acceptance,
        }
    }
}

/// Random matrix products on projective space: exponents, filtrations,
/// fibered drift and stationary-lift diagnostics.
#[derive(Debug, Parser)]
#[command(name = "projlift", version)]
struct Cli {
    command: Cmd,
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed and PROJLIFT_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(cli: &Cli) -> projlift::Result<RunOutcome> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = ExperimentConfig::load(&cli.config)?
        .with_command(cli.command.into())?
        .resolve(cli.seed, env_seed.as_deref(), cli.out.clone())?;
    runner::run_with_threads(&cfg, cli.threads)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { runner::EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(out) => {
            for l in &out.lines {
                println!("{l}");
            }
            for p in &out.written {
                println!("wrote {}", p.display());
            }
            ExitCode::from(out.status as u8)
        }
        Err(e) => {
            eprintln!("projlift: {e}");
            ExitCode::from(runner::exit_status(&e) as u8)
        }
    }
}
