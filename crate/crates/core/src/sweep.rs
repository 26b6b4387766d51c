//! Hyperparameter sweeps and runtime scaling measurements.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;

use crate::dataset::Dataset;
use crate::error::{CoreError, Result};
use crate::fem::{
    build_beam_model, run_explicit, stable_increment, ExcitationSpec, MaterialSection, RunOptions,
};
use crate::graph::{build_topology, FrameMode};
use crate::metrics::rollout_mse;
use crate::model::{predict_accelerations, update_state, GnssHyper, GnssModel, PrescribedMotion, StateWindow};
use crate::rollout::{rollout, RolloutSettings};
use crate::train::{train, TrainConfig};

/// Hyperparameter axis varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    RadiusMultiple,
    PenaltyS,
    MessageSteps,
    NoiseFraction,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "radius_multiple" => Ok(SweepAxis::RadiusMultiple),
            "penalty_s" => Ok(SweepAxis::PenaltyS),
            "message_steps" => Ok(SweepAxis::MessageSteps),
            "noise_fraction" => Ok(SweepAxis::NoiseFraction),
            other => Err(CoreError::Config(format!(
                "unknown sweep axis '{other}' (expected radius_multiple, penalty_s, \
                 message_steps or noise_fraction)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::RadiusMultiple => "radius_multiple",
            SweepAxis::PenaltyS => "penalty_s",
            SweepAxis::MessageSteps => "message_steps",
            SweepAxis::NoiseFraction => "noise_fraction",
        }
    }

    fn apply(&self, config: &mut TrainConfig, value: f64) {
        match self {
            SweepAxis::RadiusMultiple => config.radius_multiple = value,
            SweepAxis::PenaltyS => config.penalty_s = value,
            SweepAxis::MessageSteps => config.message_steps = value.round() as usize,
            SweepAxis::NoiseFraction => config.noise_fraction = value,
        }
    }
}

/// One sweep cell: the axis value, rollout MSE mean/std across trajectories,
/// how many rollouts tripped the divergence flag, and the parameter count.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub diverged: usize,
    pub param_count: usize,
}

/// Train once per axis value (all other hyperparameters at the base config)
/// and evaluate the rollout MSE across all provided trajectories. Diverged
/// rollouts are recorded, not dropped.
pub fn sweep(
    base: &TrainConfig,
    axis: SweepAxis,
    values: &[f64],
    train_data: &Dataset,
    val_data: &Dataset,
    eval_data: &Dataset,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CoreError::InvalidArgument("sweep values are empty".into()));
    }
    if eval_data.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut config = base.clone();
        axis.apply(&mut config, value);
        log::info!("sweep {} = {value}", axis.as_str());
        let (model, _) = train(&config, train_data, val_data)?;
        let spacing = train_data.element_spacing()?;
        let radius = config.radius_multiple * spacing;

        let mut mses = Vec::new();
        let mut diverged = 0usize;
        for traj in &eval_data.trajectories {
            let mut settings =
                RolloutSettings::replaying_truth(traj.num_steps(), config.history, radius);
            settings.mode = config.mode;
            let result = rollout(&model, traj, &settings)?;
            if result.diverged {
                diverged += 1;
            }
            mses.push(rollout_mse(&result.frames, traj, result.seed_len));
        }
        let mean = mses.iter().sum::<f64>() / mses.len() as f64;
        let var = mses.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / mses.len() as f64;
        rows.push(SweepRow {
            value,
            mean_mse: mean,
            std_mse: var.sqrt(),
            diverged,
            param_count: model.num_params(),
        });
    }
    Ok(rows)
}

pub fn write_sweep_table(axis: SweepAxis, rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut out = format!("{}\tmean_rollout_mse\tstd_rollout_mse\tdiverged\tparam_count\n", axis.as_str());
    for r in rows {
        out.push_str(&format!(
            "{}\t{:e}\t{:e}\t{}\t{}\n",
            r.value, r.mean_mse, r.std_mse, r.diverged, r.param_count
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One measured size in the scaling study.
#[derive(Debug, Clone)]
pub struct BenchPoint {
    pub nodes: usize,
    pub edges: usize,
    /// Median wall time of one surrogate rollout step (predict + update).
    pub gnss_step_seconds: f64,
    /// Median wall time of a full explicit FEM run at the CFL-bound timestep.
    pub fem_total_seconds: f64,
    pub fem_steps: usize,
    pub fem_dt: f64,
}

/// Scaling study output: per-size medians plus fitted log-log slopes.
#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub points: Vec<BenchPoint>,
    /// Log-log slope of surrogate per-step time vs node count.
    pub gnss_slope: f64,
    /// Log-log slope of FEM total time vs node count.
    pub fem_slope: f64,
    /// Log-log slope of the counted edge number vs node count.
    pub edge_slope: f64,
    /// FEM total time over surrogate total time for the same physical span,
    /// at the largest size. Hardware-specific, reported informationally.
    pub runtime_ratio_at_largest: f64,
    /// Physical time span both solvers cover in the ratio.
    pub matched_duration: f64,
    /// Physical timestep assumed for the surrogate.
    pub dt_ph: f64,
}

/// Measure surrogate per-step cost and FEM total cost over a range of mesh
/// sizes (node counts) at fixed beam length, fitting log-log slopes. Every
/// timing point is the median of `reps >= 5` repetitions.
pub fn runtime_bench(sizes: &[usize], total_time: f64, dt_ph: f64, reps: usize) -> Result<ScalingReport> {
    if sizes.len() < 3 {
        return Err(CoreError::InvalidArgument(
            "need at least 3 sizes for a slope fit".into(),
        ));
    }
    let max = *sizes.iter().max().unwrap();
    let min = *sizes.iter().min().unwrap();
    if max < 4 * min {
        return Err(CoreError::InvalidArgument(
            "sizes must span at least a factor of 4".into(),
        ));
    }
    if reps < 5 {
        return Err(CoreError::InvalidArgument(
            "timing points need at least 5 repetitions".into(),
        ));
    }

    let length = 0.32;
    let section = MaterialSection::default();
    let mut points = Vec::with_capacity(sizes.len());
    for &nodes in sizes {
        if nodes < 16 {
            return Err(CoreError::InvalidArgument(format!(
                "size {nodes} too small for the scaling study"
            )));
        }
        let element = length / (nodes - 1) as f64;
        let model = build_beam_model(length, element, section, length / 2.0)?;
        let spec = ExcitationSpec::transverse(50e3, 1e-6);

        // FEM at 90% of the stability bound, minimal storage.
        let bound = stable_increment(&model);
        let fem_steps = (total_time / (0.9 * bound)).ceil() as usize;
        let dt = total_time / fem_steps as f64;
        let options = RunOptions {
            total_time,
            dt,
            store_every: fem_steps,
            enforce_stability: true,
        };
        let mut fem_times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let tick = Instant::now();
            let traj = run_explicit(&model, &spec, &options)?;
            std::hint::black_box(traj.num_steps());
            fem_times.push(tick.elapsed().as_secs_f64());
        }

        // Surrogate per-step time on a quiescent window of the same mesh.
        let radius = 7.0 * element;
        let hyper = GnssHyper::standard(radius, 10);
        let gnss = GnssModel::init(hyper, 1)?;
        let edges = build_topology(&model.rest_positions, radius)?;
        let mut node_types = vec![0u32; nodes];
        node_types[model.actuator_node] = 1;
        let base_window = StateWindow {
            frames: (0..hyper.history + 2)
                .map(|_| Array2::zeros((nodes, 2)))
                .collect(),
            rest_positions: model.rest_positions.clone(),
            node_types,
            radius,
            mode: FrameMode::Local,
        };
        let prescribed = PrescribedMotion {
            entries: vec![(model.actuator_node, [0.0, 1e-6])],
        };
        // Warm-up, then timed repetitions.
        let mut window = base_window.clone();
        let accel = predict_accelerations(&window, &gnss)?;
        update_state(&mut window, &accel, &prescribed)?;
        let mut step_times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut window = base_window.clone();
            let tick = Instant::now();
            let accel = predict_accelerations(&window, &gnss)?;
            update_state(&mut window, &accel, &prescribed)?;
            std::hint::black_box(&window.frames);
            step_times.push(tick.elapsed().as_secs_f64());
        }

        points.push(BenchPoint {
            nodes,
            edges: edges.len(),
            gnss_step_seconds: median(&mut step_times),
            fem_total_seconds: median(&mut fem_times),
            fem_steps,
            fem_dt: dt,
        });
    }

    let xs: Vec<f64> = points.iter().map(|p| (p.nodes as f64).ln()).collect();
    let gnss_slope = fit_slope(&xs, &points.iter().map(|p| p.gnss_step_seconds.ln()).collect::<Vec<_>>());
    let fem_slope = fit_slope(&xs, &points.iter().map(|p| p.fem_total_seconds.ln()).collect::<Vec<_>>());
    let edge_slope = fit_slope(&xs, &points.iter().map(|p| (p.edges as f64).ln()).collect::<Vec<_>>());

    let largest = points.last().unwrap();
    let surrogate_total = largest.gnss_step_seconds * (total_time / dt_ph);
    let runtime_ratio_at_largest = largest.fem_total_seconds / surrogate_total;

    Ok(ScalingReport {
        points,
        gnss_slope,
        fem_slope,
        edge_slope,
        runtime_ratio_at_largest,
        matched_duration: total_time,
        dt_ph,
    })
}

pub fn write_scaling_report(report: &ScalingReport, path: &Path) -> Result<()> {
    let mut out = String::from("nodes\tedges\tgnss_step_s\tfem_total_s\tfem_steps\tfem_dt_s\n");
    for p in &report.points {
        out.push_str(&format!(
            "{}\t{}\t{:e}\t{:e}\t{}\t{:e}\n",
            p.nodes, p.edges, p.gnss_step_seconds, p.fem_total_seconds, p.fem_steps, p.fem_dt
        ));
    }
    out.push_str(&format!("# gnss_step_slope\t{:.4}\n", report.gnss_slope));
    out.push_str(&format!("# fem_total_slope\t{:.4}\n", report.fem_slope));
    out.push_str(&format!("# edge_count_slope\t{:.4}\n", report.edge_slope));
    out.push_str(&format!(
        "# fem_over_gnss_total_at_n{}\t{:.3}\n",
        report.points.last().map(|p| p.nodes).unwrap_or(0),
        report.runtime_ratio_at_largest
    ));
    out.push_str(&format!("# matched_duration_s\t{:e}\n", report.matched_duration));
    std::fs::write(path, out)?;
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        assert_eq!(SweepAxis::parse("radius_multiple").unwrap(), SweepAxis::RadiusMultiple);
        assert_eq!(SweepAxis::parse("penalty_s").unwrap(), SweepAxis::PenaltyS);
        assert!(SweepAxis::parse("latent").is_err());
    }

    #[test]
    fn slope_fit_recovers_exponent() {
        let xs: Vec<f64> = [400.0f64, 800.0, 1600.0].iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = [400.0f64, 800.0, 1600.0]
            .iter()
            .map(|v| (3.0 * v * v).ln())
            .collect();
        let slope = fit_slope(&xs, &ys);
        assert!((slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bench_argument_validation() {
        assert!(runtime_bench(&[400, 800], 1e-5, 1e-7, 5).is_err());
        assert!(runtime_bench(&[400, 500, 600], 1e-5, 1e-7, 5).is_err());
        assert!(runtime_bench(&[400, 800, 1600], 1e-5, 1e-7, 2).is_err());
    }
}
