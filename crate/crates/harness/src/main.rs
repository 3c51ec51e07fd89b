use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use darkrf_harness::config::{parse_kv, Settings};
use darkrf_harness::data::{self, GenArgs, GenConfig};
use darkrf_harness::experiments::budget::{self, BudgetArgs, BudgetConfig};
use darkrf_harness::experiments::stability::{self, StabilityArgs, StabilityConfig};
use darkrf_harness::experiments::timing::{self, TimingArgs, TimingConfig};
use darkrf_harness::experiments::tools::{self, GradCheckArgs, GradCheckConfig, WhitenArgs, WhitenConfig};
use darkrf_harness::experiments::toy::{self, ToyArgs, ToyConfig};
use darkrf_harness::experiments::variance::{self, VarianceArgs, VarianceConfig};
use darkrf_harness::{with_threads, HarnessError, Table};

/// Data-aware random feature attention experiments. Every subcommand writes
/// one CSV whose '#' header echoes the resolved settings; pass that CSV back
/// with --config to rerun it.
#[derive(Parser)]
#[command(name = "darkrf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Output CSV path (stdout when omitted)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// key=value settings file, or a CSV written by this tool; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for grid cells (results do not depend on it)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic q/k/v batch as role,row,col,value CSV
    Gen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: GenArgs,
    },
    /// Monte Carlo estimator variance by sampler and feature count
    VarianceSweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: VarianceArgs,
    },
    /// Attention RMSE against exact softmax attention by feature count
    ErrorVsBudget {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: BudgetArgs,
    },
    /// Runtime against sequence length (single-threaded)
    Timing {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TimingArgs,
    },
    /// Toy attention-matching training: dark, lfk, frozen performer, exact
    ToyTrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: ToyArgs,
    },
    /// Spike and divergence counts over a learning-rate grid
    Stability {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: StabilityArgs,
    },
    /// Analytic gradients against central differences
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: GradCheckArgs,
    },
    /// Plug-in whitening factor from data
    Whiten {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: WhitenArgs,
    },
}

fn resolve<C: Settings>(common: &Common, apply: impl FnOnce(&mut C)) -> Result<C, HarnessError> {
    let mut cfg = C::default();
    if let Some(path) = &common.config {
        cfg.apply_pairs(&parse_kv(&std::fs::read_to_string(path)?, &[]))?;
    }
    apply(&mut cfg);
    Ok(cfg)
}

fn execute<C: Settings + Sync>(
    common: &Common,
    apply: impl FnOnce(&mut C),
    run: impl FnOnce(&C) -> Result<Table, HarnessError> + Send,
) -> Result<(), HarnessError> {
    let cfg: C = resolve(common, apply)?;
    let table = with_threads(common.threads, || run(&cfg))??;
    let text = table.to_csv(C::COMMAND, &cfg.echo())?;
    match &common.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen { common, args } => {
            execute::<GenConfig>(common, |c| args.apply(c), |c| Ok(data::qkv_table(&data::generate(c)?)))
        }
        Command::VarianceSweep { common, args } => execute::<VarianceConfig>(common, |c| args.apply(c), variance::run),
        Command::ErrorVsBudget { common, args } => execute::<BudgetConfig>(common, |c| args.apply(c), budget::run),
        Command::Timing { common, args } => execute::<TimingConfig>(common, |c| args.apply(c), timing::run),
        Command::ToyTrain { common, args } => execute::<ToyConfig>(common, |c| args.apply(c), toy::run),
        Command::Stability { common, args } => execute::<StabilityConfig>(common, |c| args.apply(c), stability::run),
        Command::GradCheck { common, args } => {
            execute::<GradCheckConfig>(common, |c| args.apply(c), tools::grad_check_run)
        }
        Command::Whiten { common, args } => execute::<WhitenConfig>(common, |c| args.apply(c), tools::whiten_run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
