//! Command-line front end: generate synthetic corpora, preprocess capacity
//! curves, train and update GP ageing models, and emit the standard
//! analyses as CSV.
//!
//! Exit codes: 0 success, 2 input/validation error, 3 numerical failure.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "cyclegp",
    version,
    about = "GP-based Li-ion cycle-ageing toolkit"
)]
struct Cli {
    /// Declarative experiment configuration (JSON); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory override.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// RNG seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic ageing corpus with ground-truth sidecars.
    Synth {
        /// Cells per grid condition.
        #[arg(long)]
        cells_per_condition: Option<usize>,
        /// Cycling horizon per cell [Ah].
        #[arg(long)]
        horizon_ah: Option<f64>,
        /// Measurement noise sigma [% of capacity].
        #[arg(long)]
        noise: Option<f64>,
        /// Prepend an initial capacity rise to each cell.
        #[arg(long)]
        phase1: bool,
        /// Append a sudden terminal drop to each cell.
        #[arg(long)]
        phase3: bool,
    },
    /// Trim and flag raw capacity curves, emitting modelling-ready files.
    Preprocess {
        /// Raw cell CSV file or directory of them.
        #[arg(long)]
        input: PathBuf,
        /// Remove flagged outliers instead of only recording them.
        #[arg(long)]
        drop_outliers: bool,
    },
    /// Fit a model on every processed curve under the input path.
    Train {
        /// Processed curve CSV file or directory.
        #[arg(long)]
        input: PathBuf,
        /// Model output path (default: <out_dir>/model.json).
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Build the progressive training cases, train and evaluate each.
    Curriculum {
        /// Processed curve CSV file or directory.
        #[arg(long)]
        input: PathBuf,
    },
    /// Predictive-sigma sweep along one stress dimension.
    Sweep(SweepCli),
    /// Relevance weights of the stress factors for one or more models.
    Sensitivity {
        /// Model JSON files, in presentation order.
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        models: Vec<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out a capacity forecast, optionally updating the model mid-life.
    Predict(PredictCli),
    /// Score a model against processed curves (optionally per case groups).
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Processed curve CSV file or directory.
        #[arg(long)]
        input: PathBuf,
        /// Case manifest JSON defining training/validation groups.
        #[arg(long)]
        case: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SweepCli {
    #[arg(long)]
    model: PathBuf,
    /// One of: temperature, dod, mid_soc, c_chg, c_dchg.
    #[arg(long)]
    dimension: String,
    /// Grid as lo:hi:step (defaults per dimension).
    #[arg(long)]
    grid: Option<String>,
    /// Fixed conditions as key=value (repeatable).
    #[arg(long)]
    fixed: Vec<String>,
    /// Throughput increment of the probed prediction [Ah].
    #[arg(long, default_value_t = 4000.0)]
    delta_ah: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictCli {
    #[arg(long)]
    model: PathBuf,
    /// Condition schedule JSON ({"segments": [{"ah_span", "conditions"}]}).
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Measured cell CSV; enables --update-at and sets the default horizon.
    #[arg(long)]
    cell: Option<PathBuf>,
    /// Forecast horizon [Ah].
    #[arg(long)]
    horizon_ah: Option<f64>,
    /// Retrain on data observed up to this throughput and emit the updated
    /// forecast alongside the initial one.
    #[arg(long)]
    update_at: Option<f64>,
    /// Also write SVG plots next to the CSVs.
    #[arg(long)]
    svg: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// 2 for input/validation problems, 3 for numerical failures.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<cyclegp_core::Error>() {
            return match core {
                cyclegp_core::Error::IllConditionedKernel { .. }
                | cyclegp_core::Error::OptimizationFailed { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(out_dir) = cli.out_dir {
        config.out_dir = out_dir;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.optimizer.seed = seed;
        config.synth.params.seed = seed;
    }

    match cli.command {
        Command::Synth {
            cells_per_condition,
            horizon_ah,
            noise,
            phase1,
            phase3,
        } => {
            if let Some(n) = cells_per_condition {
                config.synth.cells_per_condition = n;
            }
            if let Some(h) = horizon_ah {
                config.synth.horizon_ah = h;
            }
            if let Some(sigma) = noise {
                config.synth.params.measurement_noise_sigma = sigma;
            }
            config.synth.params.phase1_rise |= phase1;
            config.synth.params.phase3_knee |= phase3;
            commands::cmd_synth(&config)
        }
        Command::Preprocess {
            input,
            drop_outliers,
        } => {
            config.preprocess.drop_outliers |= drop_outliers;
            commands::cmd_preprocess(&config, &input)
        }
        Command::Train { input, model_out } => {
            commands::cmd_train(&config, &input, model_out.as_deref())
        }
        Command::Curriculum { input } => commands::cmd_curriculum(&config, &input),
        Command::Sweep(args) => commands::cmd_sweep(
            &config,
            &commands::SweepArgs {
                model: args.model,
                dimension: args.dimension,
                grid: args.grid,
                fixed: args.fixed,
                delta_ah: args.delta_ah,
                out: args.out,
            },
        ),
        Command::Sensitivity { models, out } => commands::cmd_sensitivity(&config, &models, &out),
        Command::Predict(args) => commands::cmd_predict(
            &config,
            &commands::PredictArgs {
                model: args.model,
                schedule: args.schedule,
                cell: args.cell,
                horizon_ah: args.horizon_ah,
                update_at: args.update_at,
                svg: args.svg,
            },
        ),
        Command::Evaluate { model, input, case } => {
            commands::cmd_evaluate(&config, &model, &input, case.as_deref())
        }
    }
}
