//! Command-line driver for SNDE experiments.
//!
//! `snde <command> --config <path> [--seed N] [--gamma X] [--out DIR]`
//!
//! Exit status is 0 on success, 1 for usage or configuration errors and 2
//! when a command fails at run time.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod dataset;

use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "snde", version, about = "Stabilized neural differential equation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (key=value lines).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training dataset and its metadata.
    Generate(Common),
    /// Train a model; writes checkpoint.txt and loss.csv.
    Train(Common),
    /// Evaluate a checkpoint on fresh test trials.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: <out>/checkpoint.txt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate the true vector field instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
    },
    /// Train and evaluate once per γ in `gamma_sweep`.
    SweepGamma(Common),
    /// Compare occupation histograms of trained models with the truth.
    Measure(Common),
    /// Recompute aggregate CSVs from per-trial files.
    Report(Common),
}

fn load(common: &Common) -> snde_core::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.training.seed = s;
    }
    if let Some(g) = common.gamma {
        cfg.training.gamma = g;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command, cfg: &ExperimentConfig) -> snde_core::Result<String> {
    use snde_core::evaluation::median;
    let out = cfg.out_dir.display();
    Ok(match command {
        Command::Generate(_) => {
            let set = commands::generate(cfg)?;
            format!("wrote {} trajectories to {out}", set.trajectories.len())
        }
        Command::Train(_) => {
            let ck = commands::train(cfg)?;
            let last = ck.history.last().map_or(f64::NAN, |h| h.val_loss);
            format!("trained {} epochs, final validation loss {last:.4e}; checkpoint in {out}", ck.epoch)
        }
        Command::Eval { checkpoint, oracle, .. } => {
            let reports = commands::eval(cfg, checkpoint.as_deref(), oracle)?;
            let mean: Vec<f64> = reports
                .iter()
                .map(|r| r.state_error.iter().sum::<f64>() / r.state_error.len().max(1) as f64)
                .collect();
            let diverged = reports.iter().filter(|r| r.diverged).count();
            format!(
                "evaluated {} trials ({diverged} diverged), median mean relative error {:.4e}; reports in {out}/eval",
                reports.len(),
                median(&mean)
            )
        }
        Command::SweepGamma(_) => {
            let rows = commands::sweep_gamma(cfg)?;
            let mut s = String::from("gamma  final_state_median  final_constraint_median");
            for r in rows {
                s.push_str(&format!(
                    "\n{:>5}  {:>18.4e}  {:>23.4e}",
                    r.gamma, r.final_state_median, r.final_constraint_median
                ));
            }
            s
        }
        Command::Measure(_) => {
            let rows = commands::measure(cfg)?;
            let mut s = format!("hellinger distances at {} bins per dimension", cfg.measure_bins);
            for r in rows {
                s.push_str(&format!("\ngamma {:>5}  trial {:>3}  {:.4}", r.gamma, r.trial, r.hellinger));
            }
            s
        }
        Command::Report(_) => {
            let (state, _) = commands::report(cfg)?;
            format!("aggregated {} time points into {out}/report", state.len())
        }
    })
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let common = match &cli.command {
        Command::Generate(c)
        | Command::Train(c)
        | Command::SweepGamma(c)
        | Command::Measure(c)
        | Command::Report(c) => c,
        Command::Eval { common, .. } => common,
    };
    let cfg = match load(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match execute(cli.command, &cfg) {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
