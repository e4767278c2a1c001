//! Command-line front end: runs the experiment studies from JSON configs and
//! writes schema-versioned CSV plus a JSON summary.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use capa_kit::experiments::{load_config, run_to_files, validate_config, RunOverrides, Task};

#[derive(Parser)]
#[command(
    name = "capa-kit",
    about = "Continuous-aperture array beamforming, capacity, and fading studies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config, then $CAPA_KIT_OUT, then cwd).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the Monte-Carlo trial count.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Multiuser beamforming spectral-efficiency sweep (beamforming-se).
    Beamform(RunArgs),
    /// Point-to-point capacity sweep (p2p-capacity).
    Capacity(RunArgs),
    /// Two-user MAC/BC capacity-region boundaries (mac-bc-regions).
    Region(RunArgs),
    /// Diversity-multiplexing estimates (dmt-ecc).
    Dmt(RunArgs),
    /// Ergodic capacity versus SNR with an SPDA baseline (dmt-ecc).
    Ecc(RunArgs),
    /// Singular spectrum of the point-to-point radiation operator.
    Spectrum(RunArgs),
    /// Validate a config without running it.
    Validate {
        /// Path to the JSON experiment config.
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(args: &RunArgs, task: Task) -> ExitCode {
    let overrides = RunOverrides {
        seed: args.seed,
        trials: args.trials,
        output_dir: args.out.clone(),
    };
    match run_to_files(&args.config, task, &overrides) {
        Ok(output) => {
            for file in &output.files {
                println!("wrote {}", file.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn validate(config: &PathBuf) -> ExitCode {
    let cfg = match load_config(config) {
        Ok((cfg, _)) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let report = validate_config(&cfg);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    if report.is_ok() {
        println!("ok");
        ExitCode::SUCCESS
    } else {
        for e in &report.errors {
            eprintln!("error: {e}");
        }
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Beamform(a) => run(a, Task::Beamform),
        Command::Capacity(a) => run(a, Task::Capacity),
        Command::Region(a) => run(a, Task::Region),
        Command::Dmt(a) => run(a, Task::Dmt),
        Command::Ecc(a) => run(a, Task::Ecc),
        Command::Spectrum(a) => run(a, Task::Spectrum),
        Command::Validate { config } => validate(config),
    }
}
