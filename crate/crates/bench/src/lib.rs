//! Shared fixtures for the criterion benchmarks.

use gnss_core::fem::{build_beam_model, run_explicit, ExcitationSpec, MaterialSection, RunOptions};
use gnss_core::graph::FrameMode;
use gnss_core::model::{GnssHyper, GnssModel, StateWindow};
use gnss_core::Trajectory;

/// A clamped beam with the given node count at the reference length.
pub fn beam_fixture(nodes: usize) -> gnss_core::BeamModel {
    let length = 0.32;
    let element = length / (nodes - 1) as f64;
    build_beam_model(length, element, MaterialSection::default(), length / 2.0).unwrap()
}

/// A short ground-truth trajectory for feature/rollout benchmarks.
pub fn trajectory_fixture(nodes: usize, frames: usize) -> Trajectory {
    let beam = beam_fixture(nodes);
    let spec = ExcitationSpec::transverse(50e3, 1e-6);
    let dt = 1e-7;
    let mut options = RunOptions::new(frames as f64 * dt, dt);
    options.enforce_stability = false; // dt is well under the bound here
    run_explicit(&beam, &spec, &options).unwrap()
}

/// Standard-architecture model plus a matching window, untrained weights.
pub fn model_and_window(nodes: usize, message_steps: usize) -> (GnssModel, StateWindow) {
    let traj = trajectory_fixture(nodes, 16);
    let element = 0.32 / (nodes - 1) as f64;
    let radius = 7.0 * element;
    let hyper = GnssHyper::standard(radius, message_steps);
    let model = GnssModel::init(hyper, 7).unwrap();
    let window = StateWindow::from_trajectory(&traj, 5, 4, radius, FrameMode::Local).unwrap();
    (model, window)
}
