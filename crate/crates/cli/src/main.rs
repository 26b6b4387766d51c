//! Command-line driver for the beam-wave surrogate pipeline: dataset
//! generation, training, rollout, evaluation, sweeps, runtime benchmarks and
//! file inspection.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use gnss_core::CoreError;

/// Exit codes: 0 success, 1 io/format/other, 2 configuration error,
/// 3 numerical divergence, 4 acceptance-threshold failure.
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_ACCEPTANCE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "gnss",
    about = "Graph-network surrogate simulator for beam wave propagation",
    long_about = "Generates explicit-FEM ground truth for a clamped beam under a Hanning pulse, \
                  trains a graph-network surrogate on it, and evaluates autoregressive rollouts.\n\
                  The GNSS_THREADS environment variable caps worker parallelism."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground-truth trajectories (one file per actuator position)
    /// plus a manifest with the train/val/test split.
    Generate {
        /// Flat key = value config file (keys: length_m, element_size_m,
        /// e_pa, rho, nu, width_m, height_m, freq_hz, amplitude_m,
        /// actuator_pos_m, total_time_s, dt_s, margin_m, seed).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for trajectory files and the manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a human-readable summary of a trajectory file and verify its
    /// checksum against the manifest when one is present.
    Inspect {
        /// Trajectory file (GNSSTRJ1).
        file: PathBuf,
    },
    /// Train a surrogate model on a generated dataset directory.
    Train {
        /// Flat key = value config file (keys: batch_size, steps,
        /// noise_fraction, penalty_s, radius_multiple, message_steps, lr,
        /// seed, mode=local|absolute, and optional lr_final, history,
        /// validation_cadence, val_rollout_steps, layer_norm, residual,
        /// noise_reference).
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory containing manifest.tsv.
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Training report path (default: <out>.report.tsv).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for periodic checkpoints (default: none).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Roll a trained model out against a reference trajectory.
    Rollout {
        /// Model checkpoint (GNSSMDL1).
        #[arg(long)]
        model: PathBuf,
        /// Reference trajectory file (provides the seed and the prescribed
        /// actuator motion).
        #[arg(long)]
        data: PathBuf,
        /// Number of frames to produce, seed included (0 = full trajectory).
        #[arg(long, default_value_t = 0)]
        steps: usize,
        /// Output path for the predicted trajectory (GNSSTRJ1).
        #[arg(long)]
        out: PathBuf,
        /// Coordinate mode the model was trained in.
        #[arg(long, default_value = "local")]
        mode: String,
    },
    /// Compare a predicted trajectory against ground truth and emit metrics.
    Evaluate {
        /// Predicted trajectory (GNSSTRJ1).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth trajectory (GNSSTRJ1).
        #[arg(long)]
        truth: PathBuf,
        /// Report output path (delimited text).
        #[arg(long)]
        report: PathBuf,
        /// Velocity-history length n used by the model (seed is n+2 frames).
        #[arg(long, default_value_t = 4)]
        history: usize,
        /// Spatial-RMSE window start, microseconds.
        #[arg(long, default_value_t = 30.0)]
        window_start_us: f64,
        /// Spatial-RMSE window end, microseconds.
        #[arg(long, default_value_t = 100.0)]
        window_end_us: f64,
        /// Temporal-RMSE aggregation times, microseconds.
        #[arg(long, default_value = "1,50,99", value_delimiter = ',')]
        times_us: Vec<f64>,
    },
    /// Train once per value of one hyperparameter axis and tabulate rollout
    /// MSE across all trajectories.
    Sweep {
        /// Training config file (the base configuration).
        #[arg(long)]
        config: PathBuf,
        /// Axis: radius_multiple, penalty_s, message_steps or noise_fraction.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Dataset directory containing manifest.tsv.
        #[arg(long)]
        data: PathBuf,
        /// Output table path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure surrogate and FEM runtime scaling over mesh sizes.
    Bench {
        /// Comma-separated node counts (at least 3, spanning >= 4x).
        #[arg(long, default_value = "400,800,1600", value_delimiter = ',')]
        sizes: Vec<usize>,
        /// Matched physical duration, microseconds.
        #[arg(long, default_value_t = 25.0)]
        total_time_us: f64,
        /// Repetitions per timing point (median is reported).
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Optional report output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full run: generate, train, roll out on the test trajectory, evaluate.
    Pipeline {
        /// Combined config file (generation + training keys + rollout_steps).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the report bundle.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Ok(threads) = std::env::var("GNSS_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = gnss_core::set_worker_threads(n) {
                    log::warn!("could not configure {n} worker threads: {e}");
                }
            }
            _ => log::warn!("ignoring invalid GNSS_THREADS value '{threads}'"),
        }
    }

    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate { config, out } => commands::generate(&config, &out),
        Command::Inspect { file } => commands::inspect(&file),
        Command::Train {
            config,
            data,
            out,
            report,
            checkpoints,
        } => commands::train(&config, &data, &out, report.as_deref(), checkpoints),
        Command::Rollout {
            model,
            data,
            steps,
            out,
            mode,
        } => commands::rollout(&model, &data, steps, &out, &mode),
        Command::Evaluate {
            pred,
            truth,
            report,
            history,
            window_start_us,
            window_end_us,
            times_us,
        } => commands::evaluate(
            &pred,
            &truth,
            &report,
            history,
            (window_start_us * 1e-6, window_end_us * 1e-6),
            &times_us.iter().map(|t| t * 1e-6).collect::<Vec<_>>(),
        ),
        Command::Sweep {
            config,
            axis,
            values,
            data,
            out,
        } => commands::sweep(&config, &axis, &values, &data, &out),
        Command::Bench {
            sizes,
            total_time_us,
            reps,
            out,
        } => commands::bench(&sizes, total_time_us * 1e-6, reps, out.as_deref()),
        Command::Pipeline { config, out } => commands::pipeline(&config, &out),
    };

    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(classify(&err))
        }
    }
}

/// Map error kinds onto the documented exit codes.
fn classify(err: &CoreError) -> u8 {
    match err {
        CoreError::Config(_) | CoreError::InvalidArgument(_) | CoreError::InvalidGeometry(_) => {
            EXIT_CONFIG
        }
        CoreError::NonFinite { .. } | CoreError::UnstableTimestep { .. } => EXIT_DIVERGED,
        _ => EXIT_OTHER,
    }
}
