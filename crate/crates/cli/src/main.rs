use adhoc_etc::montecarlo::with_threads;
use adhoc_etc_cli::commands::{Command, RunError};
use adhoc_etc_cli::{run_file, Overrides};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "adhoc-etc", version = adhoc_etc_cli::BUILD, about = "Outage and ergodic transmission capacity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment file (TOML)
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Output directory (overrides outputs.dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed (overrides mc.seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte-Carlo trials (overrides mc.trials)
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Worker threads; all cores by default
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Analytic per-state outage bounds
    Bounds,
    /// Simulated per-state outage against the bounds
    Simulate,
    /// Bounds and simulation over a delta sweep
    SweepDelta,
    /// ETC bounds and simulated ETC
    Etc,
    /// ETC with and without channel-aware opportunistic transmission
    EtcCaot,
    /// ETC with and without interference management
    EtcIm,
    /// Oracle checks of the intermediate closed forms
    Verify,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Bounds => Command::Bounds,
            Cmd::Simulate => Command::Simulate,
            Cmd::SweepDelta => Command::SweepDelta,
            Cmd::Etc => Command::Etc,
            Cmd::EtcCaot => Command::EtcCaot,
            Cmd::EtcIm => Command::EtcIm,
            Cmd::Verify => Command::Verify,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(spec) = cli.spec else {
        eprintln!("error: --spec <path> is required");
        return ExitCode::from(1);
    };
    let overrides = Overrides {
        seed: cli.seed,
        trials: cli.trials,
        out: cli.out,
    };
    let command = Command::from(cli.command);
    let result = match with_threads(cli.threads, || run_file(command, &spec, &overrides)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &outcome.failures {
                    eprintln!("FAIL {f}");
                }
                ExitCode::from(2)
            }
        }
        Err(RunError::Config(e)) => {
            eprintln!("invalid experiment: {e}");
            ExitCode::from(1)
        }
        Err(RunError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
