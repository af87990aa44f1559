//! `ule` — craft unlearnable-example perturbation banks, train classifiers on
//! top of them, and measure what survives.
//!
//! Every data-producing subcommand takes an experiment TOML (see `configs/`)
//! plus single-key flag overrides, and persists the resolved config next to
//! its artifacts.
//!
//! Exit codes: 0 success, 2 bad config, 3 missing/corrupt artifact,
//! 4 crafting stopped without converging (bank still written), 5 training
//! diverged (truncated record still written), 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ule_cli::config::{ExperimentConfig, Overrides};
use ule_cli::{exit, exit_code, ops, report, suite};
use ule_core::crafting::Variant;
use ule_core::Result;

#[derive(Parser)]
#[command(
    name = "ule",
    version,
    about = "Unlearnable-examples toolkit: craft perturbation banks, train and evaluate exploiters"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Single-key config overrides shared by the config-driven subcommands.
#[derive(Args, Debug, Default)]
struct OverrideArgs {
    /// Write artifacts here instead of the config's output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Run exactly this seed (replaces `seed`/`seeds` from the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset root directory (else config, else $ULE_DATA_DIR, else ./data).
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Stratified training-subset fraction in (0,1].
    #[arg(long)]
    fraction: Option<f64>,
    /// Perturbation / attack budget, as a fraction of the pixel range.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Crafting variant: uleo | uleo_aug | uleo_gray | uleo_grayaug.
    #[arg(long)]
    variant: Option<Variant>,
    /// Training epochs for the exploiter.
    #[arg(long)]
    epochs: Option<usize>,
}

impl OverrideArgs {
    fn into_overrides(self) -> Overrides {
        Overrides {
            output_dir: self.output_dir,
            seed: self.seed,
            data_root: self.data_root,
            fraction: self.fraction,
            epsilon: self.epsilon,
            variant: self.variant,
            epochs: self.epochs,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Craft a perturbation bank from the [craft] section of a config.
    Craft {
        /// Experiment TOML.
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Train an exploiter, optionally on data poisoned by a crafted bank.
    Train {
        /// Experiment TOML.
        config: PathBuf,
        /// Bank directory to poison the training data with.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Also save the trained weights under <run dir>/checkpoint.
        #[arg(long)]
        checkpoint: bool,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Evaluate a saved checkpoint: clean accuracy, attacks from [eval],
    /// and optionally the structure profile of a bank.
    Eval {
        /// Experiment TOML.
        config: PathBuf,
        /// Checkpoint directory written by `train --checkpoint`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Bank directory to profile alongside the accuracy numbers.
        #[arg(long)]
        bank: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Train every (bank, architecture) pair from the [matrix] section and
    /// write the clean-accuracy transfer matrix.
    Matrix {
        /// Experiment TOML.
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Mixed-data study from the [mix] section: a small clean core plus
    /// clean / poisoned additions, with and without grayscale.
    MixStudy {
        /// Experiment TOML.
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Aggregate finished runs (mean ± std per group), overlay learning
    /// curves, and render perturbation sheets for banks.
    Report {
        /// Run directories written by `train` (repeatable).
        #[arg(long = "run", value_name = "DIR")]
        runs: Vec<PathBuf>,
        /// Bank directories to profile (repeatable).
        #[arg(long = "bank", value_name = "DIR")]
        banks: Vec<PathBuf>,
        /// Where the report files go.
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Run the canned experiment grid end to end and print pass/fail lines.
    PaperSuite {
        /// Where all stage outputs and the summary JSON go.
        #[arg(long)]
        output_dir: PathBuf,
        /// Small-scale grid on the synthetic dataset (minutes on one core)
        /// instead of the full CIFAR-10 grid.
        #[arg(long)]
        desk: bool,
        /// Dataset root directory (else $ULE_DATA_DIR, else ./data).
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &PathBuf, overrides: OverrideArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    overrides.into_overrides().apply(&mut cfg)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Craft { config, overrides } => {
            let cfg = load_config(&config, overrides)?;
            let mut all_converged = true;
            for seed in cfg.run_seeds() {
                println!("--- craft, seed {seed} ---");
                all_converged &= ops::cmd_craft(&cfg, seed)?.converged;
            }
            Ok(if all_converged { exit::SUCCESS } else { exit::NO_CONVERGENCE })
        }
        Cmd::Train { config, bank, checkpoint, overrides } => {
            let cfg = load_config(&config, overrides)?;
            for seed in cfg.run_seeds() {
                println!("--- train, seed {seed} ---");
                ops::cmd_train(&cfg, seed, bank.as_deref(), checkpoint)?;
            }
            Ok(exit::SUCCESS)
        }
        Cmd::Eval { config, checkpoint, bank, overrides } => {
            let cfg = load_config(&config, overrides)?;
            for seed in cfg.run_seeds() {
                ops::cmd_eval(&cfg, seed, &checkpoint, bank.as_deref())?;
            }
            Ok(exit::SUCCESS)
        }
        Cmd::Matrix { config, overrides } => {
            let cfg = load_config(&config, overrides)?;
            for seed in cfg.run_seeds() {
                ops::cmd_matrix(&cfg, seed)?;
            }
            Ok(exit::SUCCESS)
        }
        Cmd::MixStudy { config, overrides } => {
            let cfg = load_config(&config, overrides)?;
            for seed in cfg.run_seeds() {
                ops::cmd_mix_study(&cfg, seed)?;
            }
            Ok(exit::SUCCESS)
        }
        Cmd::Report { runs, banks, output_dir } => {
            report::cmd_report(&runs, &banks, &output_dir)?;
            Ok(exit::SUCCESS)
        }
        Cmd::PaperSuite { output_dir, desk, data_root, seed } => {
            let outcome = suite::run(desk, &output_dir, data_root, seed)?;
            Ok(if outcome.all_passed() { exit::SUCCESS } else { exit::OTHER })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
