//! Experiment runner CLI. Exit codes: 0 success, 2 configuration error,
//! 3 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use simstack::error::Error;
use simstack::experiment::{
    load_config, run_experiment, validate_config, RunOptions,
};
use simstack::seeding::derive_seed;

#[derive(Parser)]
#[command(name = "simstack", version, about = "Stacked-metasurface wideband beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace existing artifacts instead of refusing to run.
        #[arg(long)]
        overwrite: bool,
        /// Worker threads (overrides the config; 0 = one per core).
        #[arg(long)]
        workers: Option<usize>,
        /// Trial count (overrides the config).
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Check a config file and print every violation.
    Validate {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Print the derived per-trial seeds.
    Seeds {
        #[command(flatten)]
        config: ConfigArg,
        /// Trial count (overrides the config).
        #[arg(long)]
        trials: Option<usize>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(Error::InvalidConfig(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn run(cli: Cli) -> simstack::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            overwrite,
            workers,
            trials,
        } => {
            let mut cfg = load_config(&config.config)?;
            if let Some(w) = workers {
                cfg.workers = Some(w);
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            let diagnostics = validate_config(&cfg);
            if !diagnostics.is_empty() {
                for d in &diagnostics {
                    eprintln!("config error: {d}");
                }
                return Ok(ExitCode::from(EXIT_CONFIG));
            }
            let out_dir = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Error::InvalidConfig("no output directory: set output_dir in the config or pass --out".into()))?;
            let summary = run_experiment(&cfg, &out_dir, RunOptions { overwrite })?;
            println!(
                "wrote {} grid points x {} trials to {} ({} failed trials)",
                summary.points,
                summary.trials,
                summary.output_dir.display(),
                summary.failures
            );
            if let Some(be) = summary.effective_bandwidth_hz {
                println!("effective bandwidth: {be} Hz");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = load_config(&config.config)?;
            let diagnostics = validate_config(&cfg);
            if diagnostics.is_empty() {
                println!("ok");
                Ok(ExitCode::SUCCESS)
            } else {
                for d in &diagnostics {
                    println!("{d}");
                }
                Ok(ExitCode::from(EXIT_CONFIG))
            }
        }
        Command::Seeds { config, trials } => {
            let cfg = load_config(&config.config)?;
            let n = trials.unwrap_or(cfg.trials);
            println!("trial,seed,channel_seed");
            for t in 0..n {
                let seed = derive_seed(cfg.master_seed, t as u64);
                println!("{t},{seed},{}", derive_seed(seed, 0));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
