//! Autoregressive rollout: seed with ground-truth frames, then repeatedly
//! predict accelerations, integrate, and override prescribed nodes with the
//! excitation waveform.

use std::time::Instant;

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::fem::{hanning_pulse, ExcitationSpec};
use crate::graph::FrameMode;
use crate::model::{predict_accelerations, update_state, GnssModel, PrescribedMotion, StateWindow};
use crate::trajectory::Trajectory;

/// Anything that maps a kinematic window to per-node accelerations
/// (non-dimensional physical units).
pub trait Dynamics: Sync {
    fn accel(&self, window: &StateWindow, step: usize) -> Result<Array2<f64>>;

    /// Reject windows inconsistent with the model's hyperparameters.
    fn check_window(&self, _window: &StateWindow) -> Result<()> {
        Ok(())
    }
}

impl Dynamics for GnssModel {
    fn accel(&self, window: &StateWindow, _step: usize) -> Result<Array2<f64>> {
        predict_accelerations(window, self)
    }

    fn check_window(&self, window: &StateWindow) -> Result<()> {
        if window.history() != self.hyper.history {
            return Err(CoreError::InvalidArgument(format!(
                "window history {} does not match model history {}",
                window.history(),
                self.hyper.history
            )));
        }
        let rel = (window.radius - self.hyper.radius).abs() / self.hyper.radius.max(1e-300);
        if rel > 1e-9 {
            return Err(CoreError::InvalidArgument(format!(
                "window radius {} does not match model radius {}",
                window.radius, self.hyper.radius
            )));
        }
        Ok(())
    }
}

/// Plug-in oracle that returns the true second difference of the reference
/// trajectory. Drives the rollout loop back onto the ground truth exactly,
/// which pins the updater and feature pipeline as inverse-consistent with the
/// training target definition.
pub struct OracleDynamics<'a> {
    pub truth: &'a Trajectory,
}

impl Dynamics for OracleDynamics<'_> {
    fn accel(&self, _window: &StateWindow, step: usize) -> Result<Array2<f64>> {
        self.truth.second_difference(step)
    }
}

/// Where the prescribed actuator motion comes from during rollout.
#[derive(Debug, Clone)]
pub enum ExcitationSource {
    /// Analytic Hanning-windowed pulse.
    Waveform(ExcitationSpec),
    /// Replay the reference trajectory's recorded actuator displacements.
    /// Identical to the waveform for generated data, and self-contained when
    /// only the trajectory file is available.
    FromTruth,
}

/// Rollout controls.
#[derive(Debug, Clone)]
pub struct RolloutSettings {
    /// Total frames to produce, seed included.
    pub steps: usize,
    /// Number of previous velocities n (seed length is n+2).
    pub history: usize,
    pub radius: f64,
    pub mode: FrameMode,
    pub excitation: ExcitationSource,
    /// Divergence threshold as a multiple of the excitation amplitude.
    pub divergence_factor: f64,
}

impl RolloutSettings {
    pub fn new(steps: usize, history: usize, radius: f64, excitation: ExcitationSpec) -> Self {
        Self {
            steps,
            history,
            radius,
            mode: FrameMode::Local,
            excitation: ExcitationSource::Waveform(excitation),
            divergence_factor: 1e3,
        }
    }

    pub fn replaying_truth(steps: usize, history: usize, radius: f64) -> Self {
        Self {
            steps,
            history,
            radius,
            mode: FrameMode::Local,
            excitation: ExcitationSource::FromTruth,
            divergence_factor: 1e3,
        }
    }
}

/// Full predicted rollout in local displacements.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    /// Local displacement frames, seed first. Truncated at divergence.
    pub frames: Vec<Array2<f64>>,
    /// Number of seed frames copied from ground truth (n+2).
    pub seed_len: usize,
    /// Wall time of each predicted step.
    pub step_seconds: Vec<f64>,
    pub diverged: bool,
    pub requested_steps: usize,
}

impl RolloutResult {
    pub fn num_steps(&self) -> usize {
        self.frames.len()
    }

    /// Package the prediction as a trajectory sharing the truth's geometry.
    pub fn to_trajectory(&self, truth: &Trajectory) -> Result<Trajectory> {
        let n = truth.num_nodes();
        let mut disp = ndarray::Array3::zeros((self.frames.len(), n, 2));
        for (t, frame) in self.frames.iter().enumerate() {
            for i in 0..n {
                for c in 0..2 {
                    disp[[t, i, c]] = frame[[i, c]];
                }
            }
        }
        Trajectory::new(
            truth.dt_ph,
            truth.rest_positions.clone(),
            truth.node_types.clone(),
            disp,
        )
    }
}

/// Run the rollout loop. The first n+2 frames are copied from `truth`
/// bit-exactly; every further frame comes from predict -> Euler update ->
/// kinematic override. Stops early (with the divergence flag) on non-finite
/// values or displacements beyond the divergence threshold.
pub fn rollout(
    dynamics: &dyn Dynamics,
    truth: &Trajectory,
    settings: &RolloutSettings,
) -> Result<RolloutResult> {
    let seed_len = settings.history + 2;
    if truth.num_steps() < seed_len {
        return Err(CoreError::InvalidArgument(format!(
            "trajectory has {} frames, need at least {seed_len} for the seed",
            truth.num_steps()
        )));
    }
    if settings.steps > truth.num_steps() {
        return Err(CoreError::InvalidArgument(format!(
            "requested {} steps but the reference trajectory has {}",
            settings.steps,
            truth.num_steps()
        )));
    }
    if settings.steps < seed_len {
        return Err(CoreError::InvalidArgument(format!(
            "requested {} steps, shorter than the seed {seed_len}",
            settings.steps
        )));
    }

    let mut window = StateWindow::from_trajectory(
        truth,
        seed_len - 1,
        settings.history,
        settings.radius,
        settings.mode,
    )?;
    dynamics.check_window(&window)?;

    let mut frames: Vec<Array2<f64>> = (0..seed_len).map(|t| truth.frame(t).to_owned()).collect();
    let mut step_seconds = Vec::new();
    let mut diverged = false;
    let actuator = truth.actuator_node;
    let amplitude = match &settings.excitation {
        ExcitationSource::Waveform(spec) => spec.amplitude,
        ExcitationSource::FromTruth => {
            // Peak prescribed actuator displacement plays the amplitude role.
            (0..truth.num_steps())
                .map(|t| {
                    let f = truth.frame(t);
                    let (x, y) = (f[[actuator, 0]], f[[actuator, 1]]);
                    (x * x + y * y).sqrt()
                })
                .fold(0.0f64, f64::max)
        }
    };
    if !(amplitude > 0.0) {
        return Err(CoreError::InvalidArgument(
            "cannot infer an excitation amplitude for the divergence guard".into(),
        ));
    }
    let limit = settings.divergence_factor * amplitude;

    for t in (seed_len - 1)..(settings.steps - 1) {
        let tick = Instant::now();
        let accel = dynamics.accel(&window, t)?;
        let prescribed_disp = match &settings.excitation {
            ExcitationSource::Waveform(spec) => {
                let pulse = hanning_pulse((t + 1) as f64 * truth.dt_ph, spec);
                [pulse * spec.direction[0], pulse * spec.direction[1]]
            }
            ExcitationSource::FromTruth => {
                let f = truth.frame(t + 1);
                [f[[actuator, 0]], f[[actuator, 1]]]
            }
        };
        let prescribed = PrescribedMotion {
            entries: vec![(actuator, prescribed_disp)],
        };
        update_state(&mut window, &accel, &prescribed)?;
        let local = window.current_local_displacements();
        step_seconds.push(tick.elapsed().as_secs_f64());

        if local.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        let max_mag = local
            .rows()
            .into_iter()
            .map(|r| (r[0] * r[0] + r[1] * r[1]).sqrt())
            .fold(0.0f64, f64::max);
        frames.push(local);
        if max_mag > limit {
            diverged = true;
            break;
        }
    }

    Ok(RolloutResult {
        frames,
        seed_len,
        step_seconds,
        diverged,
        requested_steps: settings.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_beam_model, run_explicit, MaterialSection, RunOptions};

    fn small_truth() -> Trajectory {
        let model = build_beam_model(0.032, 0.0008, MaterialSection::default(), 0.016).unwrap();
        let spec = ExcitationSpec::transverse(50e3, 1e-6);
        run_explicit(&model, &spec, &RunOptions::new(3e-5, 1e-7)).unwrap()
    }

    #[test]
    fn seed_only_rollout_returns_the_seed() {
        let truth = small_truth();
        let spec = ExcitationSpec::transverse(50e3, 1e-6);
        let settings = RolloutSettings::new(6, 4, 0.0056, spec);
        let oracle = OracleDynamics { truth: &truth };
        let out = rollout(&oracle, &truth, &settings).unwrap();
        assert_eq!(out.frames.len(), 6);
        assert!(!out.diverged);
        for t in 0..6 {
            let frame = truth.frame(t);
            for i in 0..truth.num_nodes() {
                for c in 0..2 {
                    assert_eq!(out.frames[t][[i, c]], frame[[i, c]]);
                }
            }
        }
    }

    #[test]
    fn oracle_model_reproduces_ground_truth() {
        let truth = small_truth();
        let spec = ExcitationSpec::transverse(50e3, 1e-6);
        let settings = RolloutSettings::new(250, 4, 0.0056, spec);
        let oracle = OracleDynamics { truth: &truth };
        let out = rollout(&oracle, &truth, &settings).unwrap();
        assert_eq!(out.frames.len(), 250);
        assert!(!out.diverged);
        let scale = truth.max_displacement();
        let mut worst = 0.0f64;
        for t in 0..250 {
            let frame = truth.frame(t);
            for i in 0..truth.num_nodes() {
                for c in 0..2 {
                    worst = worst.max((out.frames[t][[i, c]] - frame[[i, c]]).abs());
                }
            }
        }
        assert!(worst / scale < 1e-10, "relative error {:e}", worst / scale);
    }

    #[test]
    fn divergent_dynamics_trip_the_flag() {
        struct Explode;
        impl Dynamics for Explode {
            fn accel(&self, window: &StateWindow, _step: usize) -> Result<Array2<f64>> {
                Ok(Array2::from_elem((window.num_nodes(), 2), 1e-4))
            }
        }
        let truth = small_truth();
        let spec = ExcitationSpec::transverse(50e3, 1e-6);
        let settings = RolloutSettings::new(200, 4, 0.0056, spec);
        let out = rollout(&Explode, &truth, &settings).unwrap();
        assert!(out.diverged);
        assert!(out.frames.len() < 200);
    }

    #[test]
    fn mismatched_model_hyperparameters_are_rejected() {
        let truth = small_truth();
        let spec = ExcitationSpec::transverse(50e3, 1e-6);
        let hyper = crate::model::GnssHyper {
            space_dim: 2,
            history: 4,
            latent: 8,
            message_steps: 1,
            radius: 0.004, // disagrees with the rollout radius below
            num_types: 8,
            layer_norm: true,
            residual: false,
        };
        let model = GnssModel::init(hyper, 3).unwrap();
        let settings = RolloutSettings::new(10, 4, 0.0056, spec);
        assert!(rollout(&model, &truth, &settings).is_err());
    }
}
