//! Training loop: batch sampling across trajectories, velocity-noise
//! injection with consistent target adjustment, the sign-aware wMSE loss,
//! optimizer steps, periodic validation rollouts, and checkpointing.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::checkpoint::save_model;
use crate::dataset::Dataset;
use crate::error::{CoreError, Result};
use crate::graph::{build_topology, working_precision, FrameMode};
use crate::metrics::rollout_mse;
use crate::model::{
    apply_adam, backward, forward_train, AccelStats, GnssHyper, GnssModel, StateWindow,
};
use crate::nn::{AdamHyper, OptimizerState};
use crate::rollout::{rollout, RolloutSettings};
use crate::trajectory::Trajectory;

/// Which displacement scale the noise fraction multiplies.
///
/// The injected velocity noise flows into the acceleration target (the
/// target is adjusted so a perfect prediction still lands on the true next
/// frame), so its useful magnitude is bounded by the acceleration scale: at
/// ~200 stored steps per pulse period the per-step increments are ~30x larger
/// than the second differences, and increment-referenced noise drowns the
/// learning signal entirely. The second-difference reference keeps the
/// fraction meaningful; the other two scales remain selectable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseReference {
    /// Largest second difference (acceleration scale) — the default.
    MaxSecondDifference,
    /// Largest per-step displacement increment (velocity scale).
    MaxIncrement,
    /// Largest total displacement amplitude.
    MaxDisplacement,
}

impl NoiseReference {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max_second_difference" => Ok(NoiseReference::MaxSecondDifference),
            "max_increment" => Ok(NoiseReference::MaxIncrement),
            "max_displacement" => Ok(NoiseReference::MaxDisplacement),
            other => Err(CoreError::Config(format!(
                "noise_reference must be 'max_second_difference', 'max_increment' \
                 or 'max_displacement', got '{other}'"
            ))),
        }
    }
}

/// Everything the training loop needs to know.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    /// Noise standard deviation as a fraction of the reference scale.
    pub noise_fraction: f64,
    /// Sign-disagreement penalty s >= 1.
    pub penalty_s: f64,
    /// Connectivity radius in element spacings.
    pub radius_multiple: f64,
    pub message_steps: usize,
    /// Number of previous velocities n.
    pub history: usize,
    pub lr: f64,
    /// Learning rate at the end of the exponential decay.
    pub lr_final: f64,
    pub seed: u64,
    /// Validate every this many steps (0 disables validation).
    pub validation_cadence: usize,
    /// Frames per validation rollout (0 = full trajectory).
    pub val_rollout_steps: usize,
    pub mode: FrameMode,
    pub layer_norm: bool,
    pub residual: bool,
    pub noise_reference: NoiseReference,
    /// When set, checkpoints are written here at every validation.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            steps: 2000,
            noise_fraction: 0.095,
            penalty_s: 1.5,
            radius_multiple: 7.0,
            message_steps: 10,
            history: 4,
            lr: 1e-4,
            lr_final: 1e-6,
            seed: 0,
            validation_cadence: 0,
            val_rollout_steps: 0,
            mode: FrameMode::Local,
            layer_norm: true,
            residual: false,
            noise_reference: NoiseReference::MaxSecondDifference,
            checkpoint_dir: None,
        }
    }
}

/// One training sample: a (possibly noise-injected) kinematic window and the
/// matching acceleration target in raw (non-standardized) units.
#[derive(Debug, Clone)]
pub struct Sample {
    pub window: StateWindow,
    pub target: Array2<f64>,
    pub traj_index: usize,
    pub t: usize,
}

/// Uniformly sample B (trajectory, timestep) pairs across all valid
/// timesteps of all trajectories, with replacement. Valid timesteps leave
/// room for the velocity history behind and the target frame ahead:
/// t in [n+1, T-2].
pub fn sample_batch(
    data: &Dataset,
    history: usize,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>> {
    if data.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let min_steps = history + 3;
    let mut counts = Vec::with_capacity(data.trajectories.len());
    for (i, traj) in data.trajectories.iter().enumerate() {
        if traj.num_steps() < min_steps {
            return Err(CoreError::InvalidArgument(format!(
                "trajectory {i} has {} steps, need at least {min_steps}",
                traj.num_steps()
            )));
        }
        counts.push(traj.num_steps() - history - 2);
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(CoreError::EmptyDataset);
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let mut flat = rng.random_range(0..total);
        for (traj_idx, &c) in counts.iter().enumerate() {
            if flat < c {
                out.push((traj_idx, history + 1 + flat));
                break;
            }
            flat -= c;
        }
    }
    Ok(out)
}

/// Build a training sample at (trajectory, t): seed the window, inject
/// i.i.d. Gaussian noise into every velocity-history entry (re-deriving the
/// earlier positions backward from the unchanged current frame), and
/// recompute the target so that a perfect prediction still lands on the true
/// next frame through the Euler updater.
pub fn make_sample(
    traj: &Trajectory,
    traj_index: usize,
    t: usize,
    history: usize,
    radius: f64,
    mode: FrameMode,
    noise_std: f64,
    rng: &mut impl Rng,
) -> Result<Sample> {
    if t + 1 >= traj.num_steps() {
        return Err(CoreError::InvalidArgument(format!(
            "t={t} leaves no target frame (T={})",
            traj.num_steps()
        )));
    }
    let mut window = StateWindow::from_trajectory(traj, t, history, radius, mode)?;
    let num_nodes = traj.num_nodes();

    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).unwrap();
        // Perturb the n+1 velocities, then rebuild frames backward from the
        // unchanged newest frame.
        let n = history;
        let mut velocities: Vec<Array2<f64>> = (0..=n)
            .map(|k| &window.frames[k + 1] - &window.frames[k])
            .collect();
        for v in velocities.iter_mut() {
            for entry in v.iter_mut() {
                *entry += normal.sample(rng);
            }
        }
        for k in (0..=n).rev() {
            let rebuilt = &window.frames[k + 1] - &velocities[k];
            window.frames[k] = rebuilt;
        }
    }

    // Target: the acceleration that drives the (noisy) window onto the true
    // next frame under v' = v + y, u' = u + v'.
    let next_truth = traj.frame(t + 1);
    let mut next_stored = Array2::zeros((num_nodes, 2));
    for i in 0..num_nodes {
        for c in 0..2 {
            next_stored[[i, c]] = match mode {
                FrameMode::Local => next_truth[[i, c]],
                FrameMode::Absolute => {
                    working_precision(traj.rest_positions[i][c] + next_truth[[i, c]])
                }
            };
        }
    }
    let last = window.frames.last().unwrap();
    let velocity = window.last_velocity();
    let target = &(&next_stored - last) - &velocity;
    Ok(Sample {
        window,
        target,
        traj_index,
        t,
    })
}

/// Sign-aware weighted mean squared error: residuals are scaled by `s`
/// whenever prediction and target disagree in sign (a zero product counts as
/// agreement). Reduces to plain MSE at s = 1.
pub fn wmse_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>, s: f64) -> f64 {
    let (sse, _) = wmse_sse(pred, target, s, false);
    sse / pred.len() as f64
}

/// Sum of squared weighted residuals and (optionally) its gradient with
/// respect to the predictions.
fn wmse_sse(
    pred: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    s: f64,
    with_grad: bool,
) -> (f64, Option<Array2<f64>>) {
    assert_eq!(pred.shape(), target.shape(), "wMSE shape mismatch");
    let mut sse = 0.0;
    let mut grad = with_grad.then(|| Array2::zeros(pred.raw_dim()));
    for ((idx, &y), &y_hat) in pred.indexed_iter().zip(target.iter()) {
        let w = if y * y_hat >= 0.0 { 1.0 } else { s };
        let diff = y - y_hat;
        sse += w * w * diff * diff;
        if let Some(g) = grad.as_mut() {
            g[idx] = 2.0 * w * w * diff;
        }
    }
    (sse, grad)
}

/// Per-component mean/std of the clean acceleration targets over a dataset
/// (in the given mode's storage convention).
pub fn compute_accel_stats(data: &Dataset, mode: FrameMode) -> Result<AccelStats> {
    let mut count = 0u64;
    let mut sum = [0.0f64; 2];
    let mut sumsq = [0.0f64; 2];
    for traj in &data.trajectories {
        for t in 1..traj.num_steps().saturating_sub(1) {
            let y = mode_second_difference(traj, t, mode)?;
            for i in 0..traj.num_nodes() {
                for c in 0..2 {
                    let v = y[[i, c]];
                    sum[c] += v;
                    sumsq[c] += v * v;
                }
            }
            count += traj.num_nodes() as u64;
        }
    }
    if count == 0 {
        return Err(CoreError::EmptyDataset);
    }
    let mut mean = [0.0; 2];
    let mut std = [0.0; 2];
    for c in 0..2 {
        mean[c] = sum[c] / count as f64;
        let var = (sumsq[c] / count as f64 - mean[c] * mean[c]).max(0.0);
        std[c] = var.sqrt();
    }
    // A component with (near-)zero variance carries no signal; standardizing
    // it with its own scale would blow destandardized predictions up to O(1).
    // Fall back to the other component's scale so degenerate directions stay
    // at the same magnitude as live ones.
    let largest = std[0].max(std[1]);
    for c in 0..2 {
        if std[c] <= 1e-12 * largest || std[c] == 0.0 {
            std[c] = if largest > 0.0 { largest } else { 1.0 };
        }
    }
    Ok(AccelStats { mean, std })
}

fn mode_second_difference(traj: &Trajectory, t: usize, mode: FrameMode) -> Result<Array2<f64>> {
    match mode {
        FrameMode::Local => traj.second_difference(t),
        FrameMode::Absolute => {
            let n = traj.num_nodes();
            let mut out = Array2::zeros((n, 2));
            let (prev, cur, next) = (traj.frame(t - 1), traj.frame(t), traj.frame(t + 1));
            for i in 0..n {
                for c in 0..2 {
                    let rest = traj.rest_positions[i][c];
                    let a = working_precision(rest + prev[[i, c]]);
                    let b = working_precision(rest + cur[[i, c]]);
                    let d = working_precision(rest + next[[i, c]]);
                    out[[i, c]] = d - 2.0 * b + a;
                }
            }
            Ok(out)
        }
    }
}

/// Noise standard deviation from the config's fraction and reference scale.
pub fn noise_std(config: &TrainConfig, data: &Dataset) -> f64 {
    let reference = match config.noise_reference {
        NoiseReference::MaxSecondDifference => data.max_second_difference(),
        NoiseReference::MaxIncrement => data.max_step_increment(),
        NoiseReference::MaxDisplacement => data.max_displacement(),
    };
    config.noise_fraction * reference
}

/// One gradient step over a prepared batch. Returns the batch loss; on a
/// non-finite loss the step is skipped and logged.
pub fn train_step(
    model: &mut GnssModel,
    batch: &[Sample],
    config: &TrainConfig,
    opt: &mut OptimizerState,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let total_count: usize = batch.iter().map(|s| s.target.len()).sum();
    let shared: &GnssModel = model;
    let results: Vec<Result<(f64, crate::model::GnssGrads)>> = batch
        .par_iter()
        .map(|sample| {
            let edges = build_topology(&sample.window.rest_positions, sample.window.radius)?;
            let fg = sample.window.feature_graph(&edges);
            let (pred_std, tape) = forward_train(shared, &fg)?;
            let target_std = shared.accel_stats.standardize(&sample.target);
            let (sse, grad) =
                wmse_sse(pred_std.view(), target_std.view(), config.penalty_s, true);
            let mut upstream = grad.unwrap();
            upstream.mapv_inplace(|v| v / total_count as f64);
            let grads = backward(shared, &tape, upstream.view())?;
            Ok((sse, grads))
        })
        .collect();

    let mut total_sse = 0.0;
    let mut accumulated: Option<crate::model::GnssGrads> = None;
    for r in results {
        let (sse, grads) = r?;
        total_sse += sse;
        match accumulated.as_mut() {
            None => accumulated = Some(grads),
            Some(acc) => acc.add_assign(&grads),
        }
    }
    let loss = total_sse / total_count as f64;
    if !loss.is_finite() {
        log::warn!("skipping training step: non-finite loss {loss}");
        return Ok(loss);
    }
    apply_adam(model, &accumulated.unwrap(), opt);
    Ok(loss)
}

/// Per-step training record plus validation curve.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// (step, validation rollout MSE) pairs.
    pub validations: Vec<(usize, f64)>,
    pub step_seconds: Vec<f64>,
    pub best_step: Option<usize>,
}

impl TrainReport {
    /// Delimited text: one row per step with the loss, the validation MSE
    /// where measured, and the wall time.
    pub fn write_tsv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("step\tloss\tval_mse\tseconds\n");
        for (k, loss) in self.losses.iter().enumerate() {
            let val = self
                .validations
                .iter()
                .find(|(s, _)| *s == k)
                .map(|(_, v)| format!("{v:e}"))
                .unwrap_or_default();
            let secs = self.step_seconds.get(k).copied().unwrap_or(0.0);
            out.push_str(&format!("{k}\t{loss:e}\t{val}\t{secs:.6}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.losses[range.start.min(self.losses.len())..range.end.min(self.losses.len())];
        if slice.is_empty() {
            return f64::NAN;
        }
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

/// Per-sample RNG stream: mixes (seed, step, sample index) so batches are
/// reproducible regardless of evaluation order.
fn sample_rng(seed: u64, step: usize, idx: usize) -> ChaCha8Rng {
    let mut z = seed
        ^ (step as u64).wrapping_mul(0x9E3779B97F4A7C15)
        ^ (idx as u64).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Full training run. Returns the best-validation model (the final model when
/// validation is disabled) and the training report.
pub fn train(
    config: &TrainConfig,
    train_data: &Dataset,
    val_data: &Dataset,
) -> Result<(GnssModel, TrainReport)> {
    if train_data.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let spacing = train_data.element_spacing()?;
    let radius = config.radius_multiple * spacing;
    let mut hyper = GnssHyper::standard(radius, config.message_steps);
    hyper.history = config.history;
    hyper.layer_norm = config.layer_norm;
    hyper.residual = config.residual;

    let mut model = GnssModel::init(hyper, config.seed)?;
    model.accel_stats = compute_accel_stats(train_data, config.mode)?;
    let sigma = noise_std(config, train_data);

    let adam = AdamHyper {
        lr: config.lr,
        ..AdamHyper::default()
    };
    let mut opt = OptimizerState::new(adam, &model.tensor_sizes());
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, GnssModel, usize)> = None;

    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    for step in 0..config.steps {
        let tick = Instant::now();
        // Exponential learning-rate decay from lr to lr_final over the run.
        opt.hyper.lr = if config.steps > 1 && config.lr_final > 0.0 && config.lr_final < config.lr
        {
            let frac = step as f64 / (config.steps - 1) as f64;
            config.lr * (config.lr_final / config.lr).powf(frac)
        } else {
            config.lr
        };

        let picks = sample_batch(train_data, config.history, config.batch_size, &mut master)?;
        let samples: Vec<Sample> = picks
            .iter()
            .enumerate()
            .map(|(idx, &(traj_idx, t))| {
                let mut rng = sample_rng(config.seed, step, idx);
                make_sample(
                    &train_data.trajectories[traj_idx],
                    traj_idx,
                    t,
                    config.history,
                    radius,
                    config.mode,
                    sigma,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        let loss = train_step(&mut model, &samples, config, &mut opt)?;
        report.losses.push(loss);
        report.step_seconds.push(tick.elapsed().as_secs_f64());

        let last = step + 1 == config.steps;
        if config.validation_cadence > 0
            && !val_data.is_empty()
            && ((step + 1) % config.validation_cadence == 0 || last)
        {
            let val_mse = validate(&model, val_data, config, radius)?;
            report.validations.push((step, val_mse));
            log::info!("step {step}: loss {loss:.3e}, validation MSE {val_mse:.3e}");
            let improved = best.as_ref().map_or(true, |(b, _, _)| val_mse < *b);
            if improved {
                best = Some((val_mse, model.clone(), step));
            }
            if let Some(dir) = &config.checkpoint_dir {
                save_model(&model, &dir.join(format!("checkpoint_{step:06}.gnssmdl")))?;
                if improved {
                    save_model(&model, &dir.join("best.gnssmdl"))?;
                }
            }
        }
    }

    let final_model = match best {
        Some((_, best_model, best_step)) => {
            report.best_step = Some(best_step);
            best_model
        }
        None => model,
    };
    Ok((final_model, report))
}

/// Mean rollout MSE over the validation trajectories.
fn validate(
    model: &GnssModel,
    val_data: &Dataset,
    config: &TrainConfig,
    radius: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for traj in &val_data.trajectories {
        let steps = if config.val_rollout_steps == 0 {
            traj.num_steps()
        } else {
            config.val_rollout_steps.min(traj.num_steps())
        };
        let mut settings = RolloutSettings::replaying_truth(steps, config.history, radius);
        settings.mode = config.mode;
        let result = rollout(model, traj, &settings)?;
        total += rollout_mse(&result.frames, traj, result.seed_len);
    }
    Ok(total / val_data.trajectories.len() as f64)
}
