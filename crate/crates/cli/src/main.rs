//! `dpfair` — config-driven private-training experiments.
//!
//! Subcommands: `train`, `ablate`, `sweep`, `fed`, `accountant`. Each takes
//! `--config PATH` plus repeatable `--set key=value` overrides; exit codes
//! are 0 success, 2 config error, 3 data error, 4 numeric failure.

mod config;
mod error;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "dpfair", version, about = "Private training and disparity audits")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set dp.mode=clip_and_noise.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct AccountantArgs {
    /// Optional config supplying defaults for the query.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Dataset size N.
    #[arg(long)]
    n: Option<usize>,
    /// Batch size b.
    #[arg(long)]
    batch: Option<usize>,
    /// Noise multiplier z.
    #[arg(long)]
    noise_multiplier: Option<f64>,
    /// Training epochs T.
    #[arg(long)]
    epochs: Option<u64>,
    /// Target delta.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one configuration (plus a baseline reference when private).
    Train(RunArgs),
    /// Run all four arms: baseline, clip_only, noise_only, clip_and_noise.
    Ablate(RunArgs),
    /// One run per value of each sweep.<param> block.
    Sweep(RunArgs),
    /// Simulate private federated averaging over shards.
    Fed(RunArgs),
    /// Privacy cost of a (N, b, z, T, delta) configuration; no training.
    Accountant(AccountantArgs),
}

fn load(args: &RunArgs) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::config(format!("read {}: {e}", args.config.display())))?;
    ExperimentConfig::resolve(&text, &args.set)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Train(args) => {
            let cfg = load(&args)?;
            let out = PathBuf::from(cfg.get_str("out")?).join("train");
            run::cmd_train(&cfg, &out)?;
            Ok(())
        }
        Cmd::Ablate(args) => {
            let cfg = load(&args)?;
            let out = PathBuf::from(cfg.get_str("out")?).join("ablate");
            run::cmd_ablate(&cfg, &out)?;
            Ok(())
        }
        Cmd::Sweep(args) => {
            let cfg = load(&args)?;
            let out = PathBuf::from(cfg.get_str("out")?).join("sweep");
            run::cmd_sweep(&cfg, &out)
        }
        Cmd::Fed(args) => {
            let cfg = load(&args)?;
            let out = PathBuf::from(cfg.get_str("out")?).join("fed");
            run::cmd_fed(&cfg, &out)
        }
        Cmd::Accountant(args) => {
            let cfg = match &args.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::config(format!("read {}: {e}", path.display())))?;
                    ExperimentConfig::resolve(&text, &args.set)?
                }
                None => ExperimentConfig::resolve("", &args.set)?,
            };
            let n = match args.n {
                Some(n) => n,
                None => cfg.get_opt_usize("dp.accounting_n")?.ok_or_else(|| {
                    CliError::config("accountant needs --n or dp.accounting_n".to_string())
                })?,
            };
            let b = match args.batch {
                Some(b) => b,
                None => cfg.get_usize("train.batch")?,
            };
            let z = match args.noise_multiplier {
                Some(z) => z,
                None => cfg.get_opt_f64("dp.noise_multiplier")?.ok_or_else(|| {
                    CliError::config(
                        "accountant needs --noise-multiplier or dp.noise_multiplier".to_string(),
                    )
                })?,
            };
            let epochs = match args.epochs {
                Some(t) => t,
                None => cfg.get_u64("train.epochs")?,
            };
            let delta = match args.delta {
                Some(d) => d,
                None => cfg.get_f64("dp.delta")?,
            };
            run::cmd_accountant(n, b, z, epochs, delta)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
