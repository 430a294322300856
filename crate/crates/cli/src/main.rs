//! `qsd`: run samplers, oracles, comparisons and parameter sweeps from a
//! JSON experiment config.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::CompareInputs;
use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "qsd", version, about = "Sample limiting conditional distributions of absorbing Markov processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run seeded replications and write histogram and trace CSVs.
    Run(Common),
    /// Write the exact reference distribution and decay parameter.
    Oracle(Common),
    /// Compare a run histogram with an oracle distribution.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Histogram CSV (defaults to `<out>/histogram.csv`).
        #[arg(long)]
        run: Option<PathBuf>,
        /// Oracle CSV (defaults to `<out>/oracle.csv`).
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Exit with status 4 when the TV distance exceeds this.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Repeat the run over the values of one swept parameter.
    Sweep(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; takes precedence over the config.
    #[arg(long, env = "QSD_OUTPUT_DIR")]
    out: Option<PathBuf>,
    /// Worker threads for replications (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        let mut config = ExperimentConfig::load(path)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }

    fn out_dir(&self, config: Option<&ExperimentConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| config.and_then(|c| c.output_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("qsd-output"))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(k) = self.threads {
            if k == 0 {
                return Err(CliError::Config("--threads must be at least 1".into()));
            }
            builder = builder.num_threads(k);
        }
        builder.build().map_err(|e| CliError::Config(e.to_string()))
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(common) => {
            let config = common.load()?;
            commands::run(&config, &common.out_dir(Some(&config)), &common.pool()?)
        }
        Command::Oracle(common) => {
            let config = common.load()?;
            commands::oracle(&config, &common.out_dir(Some(&config)))
        }
        Command::Sweep(common) => {
            let config = common.load()?;
            commands::sweep(&config, &common.out_dir(Some(&config)), &common.pool()?)
        }
        Command::Compare { common, run, oracle, threshold } => {
            let config = match &common.config {
                Some(_) => Some(common.load()?),
                None => None,
            };
            let out = common.out_dir(config.as_ref());
            let section = config.as_ref().and_then(|c| c.compare.clone());
            let inputs = CompareInputs {
                run: run
                    .or_else(|| section.as_ref().and_then(|s| s.run.clone()))
                    .unwrap_or_else(|| out.join("histogram.csv")),
                oracle: oracle
                    .or_else(|| section.as_ref().and_then(|s| s.oracle.clone()))
                    .unwrap_or_else(|| out.join("oracle.csv")),
                threshold: threshold.or(section.map(|s| s.threshold)),
            };
            commands::compare(&inputs, &out).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qsd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
