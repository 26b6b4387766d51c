//! Temporary calibration probe (deleted before finalization).

use gnss_core::config::GenerateConfig;
use gnss_core::fem::{build_beam_model, extract_dataset_window, run_explicit, ExcitationSpec, RunOptions};
use gnss_core::train::TrainConfig;
use gnss_core::{Dataset, FrameMode};
use std::time::Instant;

fn make_dataset(length: f64, margin: f64, positions: Vec<f64>) -> (Dataset, Dataset, Dataset) {
    let cfg = GenerateConfig {
        length_m: length,
        actuator_pos_m: positions,
        margin_m: margin,
        ..GenerateConfig::default()
    };
    let section = cfg.section().unwrap();
    let spec = ExcitationSpec::transverse(cfg.freq_hz, cfg.amplitude_m);
    let mut trajs = Vec::new();
    for &pos in &cfg.actuator_pos_m {
        let beam = build_beam_model(cfg.length_m, cfg.element_size_m, section, pos).unwrap();
        let traj = run_explicit(&beam, &spec, &RunOptions::new(cfg.total_time_s, cfg.dt_s)).unwrap();
        trajs.push(extract_dataset_window(&traj, cfg.margin_m).unwrap());
    }
    let test = Dataset::new(vec![trajs.pop().unwrap()]);
    let val = Dataset::new(vec![trajs.pop().unwrap()]);
    (Dataset::new(trajs), val, test)
}

fn run_mode(
    label: &str,
    mode: FrameMode,
    steps: usize,
    data: &(Dataset, Dataset, Dataset),
) {
    let (train_data, val_data, test_data) = data;
    let t0 = Instant::now();
    let config = TrainConfig {
        steps,
        seed: 11,
        validation_cadence: steps / 8,
        val_rollout_steps: 300,
        mode,
        ..TrainConfig::default()
    };
    let (model, report) = gnss_core::train::train(&config, train_data, val_data).unwrap();
    let initial = report.mean_loss(0..20);
    let final_loss = report.mean_loss(steps - 100..steps);
    println!(
        "[{label}] {:.0?}: loss {initial:.3e} -> {final_loss:.3e} (x{:.1}), noise_std {:.2e}",
        t0.elapsed(),
        initial / final_loss,
        gnss_core::train::noise_std(&config, train_data),
    );
    println!(
        "[{label}] validations: {:?}",
        report
            .validations
            .iter()
            .map(|(s, v)| format!("{s}:{v:.2e}"))
            .collect::<Vec<_>>()
    );
    let truth = &test_data.trajectories[0];
    let spacing = train_data.element_spacing().unwrap();
    let radius = config.radius_multiple * spacing;
    let mut settings = gnss_core::RolloutSettings::replaying_truth(truth.num_steps(), 4, radius);
    settings.mode = mode;
    let result = gnss_core::rollout(&model, truth, &settings).unwrap();
    let mse = gnss_core::metrics::rollout_mse(&result.frames, truth, result.seed_len);
    // Baseline: predicting zero displacement forever.
    let zero_frames: Vec<_> = (0..truth.num_steps())
        .map(|t| {
            if t < result.seed_len {
                truth.frame(t).to_owned()
            } else {
                ndarray::Array2::zeros((truth.num_nodes(), 2))
            }
        })
        .collect();
    let zero_mse = gnss_core::metrics::rollout_mse(&zero_frames, truth, result.seed_len);
    println!(
        "[{label}] test rollout: mse {mse:.3e} (zero-baseline {zero_mse:.3e}), diverged {}, frames {}/{}",
        result.diverged,
        result.frames.len(),
        truth.num_steps()
    );
}

#[test]
#[ignore]
fn probe_criterion6_desk() {
    let data = make_dataset(0.08, 0.016, vec![0.0336, 0.04, 0.0464, 0.0528, 0.0376]);
    println!(
        "desk: {} train trajs, N={} T={}",
        data.0.trajectories.len(),
        data.0.trajectories[0].num_nodes(),
        data.0.trajectories[0].num_steps()
    );
    run_mode("desk/local", FrameMode::Local, 2000, &data);
}

#[test]
#[ignore]
fn probe_criterion7_medium() {
    let data = make_dataset(0.16, 0.044, vec![0.0664, 0.0736, 0.0848, 0.092, 0.08]);
    println!(
        "medium: {} train trajs, N={} T={}",
        data.0.trajectories.len(),
        data.0.trajectories[0].num_nodes(),
        data.0.trajectories[0].num_steps()
    );
    run_mode("med/local", FrameMode::Local, 2000, &data);
    run_mode("med/absolute", FrameMode::Absolute, 2000, &data);
}
