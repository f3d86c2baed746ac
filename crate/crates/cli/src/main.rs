mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};

use covfuse::data::FutureCovMode;
use covfuse::evaluation::{SyntheticKind, SyntheticSpec};
use covfuse::training::TrainMode;

use failure::Failure;

/// Covariate-aware patch forecasting.
///
/// Exit codes: 0 success, 1 runtime failure, 2 config error, 3 I/O error.
/// Log verbosity follows COVFUSE_LOG (error, warn, info, debug).
#[derive(Parser)]
#[command(name = "covfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a covariate-free backbone on the training split.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Attach the covariate plug-in to a pretrained backbone and train it.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        with_future_cov: bool,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Override the protocol's future covariate mode.
        #[arg(long, value_enum)]
        future_cov: Option<FutureArg>,
    },
    /// Forecast the steps after the last observed target row.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Row of the first forecast step.
        #[arg(long)]
        origin: Option<usize>,
        /// Also write history, ground truth and forecast side by side.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Rank covariates by Pearson, Granger and Lasso screening.
    Screen {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every dataset, protocol and variant listed in a benchmark config.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Write a synthetic dataset.
    GenSynthetic {
        #[arg(long, value_enum, default_value_t = KindArg::PeriodicPlusFutureDriver)]
        kind: KindArg,
        #[arg(long, default_value_t = 2000)]
        length: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 24)]
        period: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Frozen,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum FutureArg {
    Provided,
    Withheld,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Periodic,
    PeriodicPlusFutureDriver,
    VarCoupled,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Pretrain { config } => commands::pretrain_cmd(&config),
        Command::Finetune {
            config,
            mode,
            with_future_cov,
        } => {
            let mode = mode.map(|m| match m {
                ModeArg::Frozen => TrainMode::FrozenBackbone,
                ModeArg::Full => TrainMode::FullFinetune,
            });
            commands::finetune_cmd(&config, mode, with_future_cov)
        }
        Command::Evaluate {
            config,
            checkpoint,
            future_cov,
        } => {
            let mode = future_cov.map(|m| match m {
                FutureArg::Provided => FutureCovMode::Provided,
                FutureArg::Withheld => FutureCovMode::Withheld,
            });
            commands::evaluate_cmd(&config, checkpoint, mode)
        }
        Command::Forecast {
            checkpoint,
            input,
            output,
            origin,
            emit_plot_data,
        } => commands::forecast_cmd(&checkpoint, &input, &output, origin, emit_plot_data),
        Command::Screen { config } => commands::screen_cmd(&config),
        Command::Benchmark { config, output_dir } => commands::benchmark_cmd(&config, output_dir),
        Command::GenSynthetic {
            kind,
            length,
            noise,
            alpha,
            period,
            seed,
            output,
        } => {
            let kind = match kind {
                KindArg::Periodic => SyntheticKind::Periodic,
                KindArg::PeriodicPlusFutureDriver => SyntheticKind::PeriodicPlusFutureDriver,
                KindArg::VarCoupled => SyntheticKind::VarCoupled,
            };
            let spec = SyntheticSpec {
                kind,
                length,
                noise,
                alpha,
                period,
                seed,
            };
            commands::gen_synthetic_cmd(&spec, &output)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("COVFUSE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code())
        }
    }
}
