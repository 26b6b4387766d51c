//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use gnss_core::checkpoint::{load_model, save_model};
use gnss_core::config::{train_config_from_map, ConfigMap, GenerateConfig, PipelineConfig};
use gnss_core::dataset::{load_split, split_roles, Manifest, ManifestEntry, SplitRole, MANIFEST_FILE};
use gnss_core::fem::{
    build_beam_model, dispersion_wavelength, extract_dataset_window, run_explicit,
    stable_increment, ExcitationSpec, RunOptions,
};
use gnss_core::graph::FrameMode;
use gnss_core::metrics::{histogram, rollout_mse, spatial_rmse, temporal_rmse};
use gnss_core::rollout::{rollout as run_rollout, RolloutSettings};
use gnss_core::sweep::{runtime_bench, sweep as run_sweep, write_scaling_report, write_sweep_table, SweepAxis};
use gnss_core::trajectory::{payload_checksum, Trajectory, NODE_TYPE_ACTUATOR, NODE_TYPE_CLAMPED, NODE_TYPE_FREE};
use gnss_core::{CoreError, Dataset, Result};

use crate::{EXIT_ACCEPTANCE, EXIT_DIVERGED};

pub fn generate(config_path: &Path, out_dir: &Path) -> Result<u8> {
    let config = GenerateConfig::from_map(&ConfigMap::load(config_path)?)?;
    let section = config.section()?;

    // Snap positions to node indices up front so duplicates are caught before
    // any file is written.
    let mut snapped: Vec<usize> = Vec::new();
    for &pos in &config.actuator_pos_m {
        let node = (pos / config.element_size_m).round() as usize;
        if snapped.contains(&node) {
            return Err(CoreError::Config(format!(
                "duplicate actuator position {pos} m (both snap to node {node})"
            )));
        }
        snapped.push(node);
    }
    if snapped.is_empty() {
        return Err(CoreError::Config("actuator_pos_m is empty".into()));
    }
    if snapped.len() == 1 {
        log::warn!("single actuator position: the dataset will be test-only");
    }

    fs::create_dir_all(out_dir)?;
    let spec = ExcitationSpec::transverse(config.freq_hz, config.amplitude_m);
    let roles = split_roles(snapped.len());
    let mut manifest = Manifest::default();
    for (idx, &pos) in config.actuator_pos_m.iter().enumerate() {
        let beam = build_beam_model(config.length_m, config.element_size_m, section, pos)?;
        let bound = stable_increment(&beam);
        log::info!(
            "trajectory {idx}: actuator at {pos} m (node {}), stable dt {:.3e} s",
            beam.actuator_node,
            bound
        );
        let options = RunOptions::new(config.total_time_s, config.dt_s);
        let traj = run_explicit(&beam, &spec, &options)?;
        let window = extract_dataset_window(&traj, config.margin_m)?;
        let file = format!("traj_{idx:03}.gnsstrj");
        let path = out_dir.join(&file);
        window.write_to(&path)?;
        let bytes = fs::read(&path)?;
        manifest.entries.push(ManifestEntry {
            file,
            role: roles[idx],
            actuator_pos_m: pos,
            checksum: payload_checksum(&bytes),
            nodes: window.num_nodes(),
            steps: window.num_steps(),
        });
    }
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    let lambda = dispersion_wavelength(&section, config.freq_hz)?;
    println!(
        "generated {} trajectories in {} (window {} nodes x {} frames, bending wavelength {:.4} mm)",
        manifest.entries.len(),
        out_dir.display(),
        manifest.entries[0].nodes,
        manifest.entries[0].steps,
        lambda * 1e3
    );
    Ok(0)
}

pub fn inspect(file: &Path) -> Result<u8> {
    let bytes = fs::read(file)?;
    let checksum = payload_checksum(&bytes);
    let traj = Trajectory::from_bytes(&bytes)?;
    let (mut free, mut actuators, mut clamped, mut other) = (0usize, 0usize, 0usize, 0usize);
    for &ty in &traj.node_types {
        match ty {
            NODE_TYPE_FREE => free += 1,
            NODE_TYPE_ACTUATOR => actuators += 1,
            NODE_TYPE_CLAMPED => clamped += 1,
            _ => other += 1,
        }
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in traj.displacements().iter() {
        min = min.min(v);
        max = max.max(v);
    }
    println!("file: {}", file.display());
    println!("nodes: {}", traj.num_nodes());
    println!("steps: {}", traj.num_steps());
    println!("dt_ph: {:e} s", traj.dt_ph);
    println!("span: {:e} s", traj.dt_ph * traj.num_steps() as f64);
    println!("node types: {free} free, {actuators} actuator, {clamped} clamped, {other} other");
    println!("actuator node: {}", traj.actuator_node);
    println!("displacement range: [{min:e}, {max:e}] m");
    println!("checksum: {checksum:016x}");

    // Verify against a manifest sitting next to the file, when there is one.
    if let (Some(dir), Some(name)) = (file.parent(), file.file_name()) {
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            let manifest = Manifest::read(&manifest_path)?;
            if let Some(entry) = manifest.lookup(&name.to_string_lossy()) {
                if entry.checksum == checksum {
                    println!("manifest: checksum OK ({})", entry.role);
                } else {
                    println!(
                        "manifest: CHECKSUM MISMATCH (manifest {:016x}, file {checksum:016x})",
                        entry.checksum
                    );
                    return Ok(crate::EXIT_OTHER);
                }
            }
        }
    }
    Ok(0)
}

pub fn train(
    config_path: &Path,
    data_dir: &Path,
    out: &Path,
    report: Option<&Path>,
    checkpoints: Option<PathBuf>,
) -> Result<u8> {
    let mut config = train_config_from_map(&ConfigMap::load(config_path)?)?;
    config.checkpoint_dir = checkpoints;
    let (train_data, val_data, _test) = load_split(data_dir)?;
    log::info!(
        "training on {} trajectories, validating on {}",
        train_data.trajectories.len(),
        val_data.trajectories.len()
    );
    let (model, train_report) = gnss_core::train(&config, &train_data, &val_data)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    save_model(&model, out)?;
    let report_path = report
        .map(PathBuf::from)
        .unwrap_or_else(|| out.with_extension("report.tsv"));
    train_report.write_tsv(&report_path)?;
    let initial = train_report.mean_loss(0..20);
    let final_loss = train_report.mean_loss(train_report.losses.len().saturating_sub(100)..train_report.losses.len());
    println!(
        "trained {} steps: loss {initial:.3e} -> {final_loss:.3e}; model {} ({} parameters), report {}",
        train_report.losses.len(),
        out.display(),
        model.num_params(),
        report_path.display()
    );
    Ok(0)
}

pub fn rollout(
    model_path: &Path,
    data: &Path,
    steps: usize,
    out: &Path,
    mode: &str,
) -> Result<u8> {
    let model = load_model(model_path)?;
    let truth = Trajectory::read_from(data)?;
    let steps = if steps == 0 { truth.num_steps() } else { steps };
    let mut settings =
        RolloutSettings::replaying_truth(steps, model.hyper.history, model.hyper.radius);
    settings.mode = FrameMode::parse(mode)?;
    let result = run_rollout(&model, &truth, &settings)?;
    let predicted = result.to_trajectory(&truth)?;
    predicted.write_to(out)?;
    let mse = rollout_mse(&result.frames, &truth, result.seed_len);
    let mean_step = if result.step_seconds.is_empty() {
        0.0
    } else {
        result.step_seconds.iter().sum::<f64>() / result.step_seconds.len() as f64
    };
    println!(
        "rollout: {} of {} frames, MSE {mse:.4e} m, {:.4} s/step, diverged: {}",
        result.frames.len(),
        steps,
        mean_step,
        result.diverged
    );
    if result.diverged {
        return Ok(EXIT_DIVERGED);
    }
    Ok(0)
}

pub fn evaluate(
    pred_path: &Path,
    truth_path: &Path,
    report: &Path,
    history: usize,
    window_seconds: (f64, f64),
    times_seconds: &[f64],
) -> Result<u8> {
    let pred = Trajectory::read_from(pred_path)?;
    let truth = Trajectory::read_from(truth_path)?;
    let seed_len = history + 2;
    let frames: Vec<_> = (0..pred.num_steps()).map(|t| pred.frame(t).to_owned()).collect();

    let mse = rollout_mse(&frames, &truth, seed_len);
    // Divergence heuristics on a stored prediction: truncated early, huge
    // values relative to the prescribed motion, or non-finite entries.
    let amplitude = (0..truth.num_steps())
        .map(|t| {
            let f = truth.frame(t);
            let (x, y) = (f[[truth.actuator_node, 0]], f[[truth.actuator_node, 1]]);
            (x * x + y * y).sqrt()
        })
        .fold(0.0f64, f64::max);
    let max_pred = frames
        .iter()
        .flat_map(|f| f.iter())
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    let diverged = pred.num_steps() < truth.num_steps()
        || !max_pred.is_finite()
        || (amplitude > 0.0 && max_pred > 1e3 * amplitude);

    let mut out = String::from("metric\tgroup\tindex\tvalue\n");
    out.push_str(&format!("rollout_mse\t-\t-\t{mse:e}\n"));
    out.push_str(&format!("diverged\t-\t-\t{}\n", u8::from(diverged)));
    out.push_str(&format!("frames\t-\t-\t{}\n", pred.num_steps()));

    match spatial_rmse(&frames, &truth, 5, window_seconds) {
        Ok(segments) => {
            for (s, values) in segments.iter().enumerate() {
                for (i, v) in values.iter().enumerate() {
                    out.push_str(&format!("spatial_rmse\tseg{s}\t{i}\t{v:e}\n"));
                }
                let (edges, counts) = histogram(values, 20);
                for (i, e) in edges.iter().enumerate() {
                    out.push_str(&format!("spatial_hist_edge\tseg{s}\t{i}\t{e:e}\n"));
                }
                for (i, c) in counts.iter().enumerate() {
                    out.push_str(&format!("spatial_hist_count\tseg{s}\t{i}\t{c}\n"));
                }
            }
        }
        Err(e) => log::warn!("spatial RMSE unavailable: {e}"),
    }
    match temporal_rmse(&frames, &truth, times_seconds, seed_len) {
        Ok(lists) => {
            for (k, values) in lists.iter().enumerate() {
                let label = format!("{:e}", times_seconds[k]);
                for (i, v) in values.iter().enumerate() {
                    out.push_str(&format!("temporal_rmse\t{label}\t{i}\t{v:e}\n"));
                }
            }
        }
        Err(e) => log::warn!("temporal RMSE unavailable: {e}"),
    }
    fs::write(report, out)?;
    println!(
        "evaluate: rollout MSE {mse:.4e} m over {} frames, diverged: {diverged}, report {}",
        pred.num_steps(),
        report.display()
    );
    Ok(0)
}

pub fn sweep(
    config_path: &Path,
    axis: &str,
    values: &[f64],
    data_dir: &Path,
    out: &Path,
) -> Result<u8> {
    let base = train_config_from_map(&ConfigMap::load(config_path)?)?;
    let axis = SweepAxis::parse(axis)?;
    let (train_data, val_data, test_data) = load_split(data_dir)?;
    // Evaluate across every trajectory in the dataset, as the sensitivity
    // study does.
    let mut all = train_data.trajectories.clone();
    all.extend(val_data.trajectories.iter().cloned());
    all.extend(test_data.trajectories.iter().cloned());
    let eval_data = Dataset::new(all);
    let rows = run_sweep(&base, axis, values, &train_data, &val_data, &eval_data)?;
    write_sweep_table(axis, &rows, out)?;
    for row in &rows {
        println!(
            "{} = {}: rollout MSE {:.4e} +- {:.4e} ({} diverged, {} params)",
            axis.as_str(),
            row.value,
            row.mean_mse,
            row.std_mse,
            row.diverged,
            row.param_count
        );
    }
    Ok(0)
}

pub fn bench(sizes: &[usize], total_time: f64, reps: usize, out: Option<&Path>) -> Result<u8> {
    let report = runtime_bench(sizes, total_time, 1e-7, reps)?;
    for p in &report.points {
        println!(
            "N = {}: {} edges, surrogate step {:.4e} s, FEM total {:.4e} s ({} steps at dt {:.3e})",
            p.nodes, p.edges, p.gnss_step_seconds, p.fem_total_seconds, p.fem_steps, p.fem_dt
        );
    }
    println!(
        "slopes (log-log vs N): surrogate step {:.3}, FEM total {:.3}, edges {:.3}",
        report.gnss_slope, report.fem_slope, report.edge_slope
    );
    println!(
        "FEM / surrogate total time at N = {}, {:.1} us span: {:.3}",
        report.points.last().unwrap().nodes,
        report.matched_duration * 1e6,
        report.runtime_ratio_at_largest
    );
    if let Some(path) = out {
        write_scaling_report(&report, path)?;
        println!("report written to {}", path.display());
    }
    Ok(0)
}

pub fn pipeline(config_path: &Path, out_dir: &Path) -> Result<u8> {
    let config = PipelineConfig::from_map(&ConfigMap::load(config_path)?)?;
    fs::create_dir_all(out_dir)?;
    let data_dir = out_dir.join("data");

    println!("[1/4] generate");
    stage("generate", || {
        // Reuse the generate command by writing the effective config keys.
        generate_from_config(&config.generate, &data_dir)
    })?;

    println!("[2/4] train ({} mode)", config.train.mode.as_str());
    let (train_data, val_data, test_data) = load_split(&data_dir)?;
    let model_path = out_dir.join("model.gnssmdl");
    let report = stage("train", || {
        let (model, report) = gnss_core::train(&config.train, &train_data, &val_data)?;
        save_model(&model, &model_path)?;
        report.write_tsv(&out_dir.join("train_report.tsv"))?;
        Ok(report)
    })?;

    println!("[3/4] rollout on the test trajectory");
    let test_traj = test_data
        .trajectories
        .first()
        .or_else(|| val_data.trajectories.first())
        .ok_or_else(|| CoreError::Config("dataset has no test trajectory".into()))?;
    let model = load_model(&model_path)?;
    let steps = if config.rollout_steps == 0 {
        test_traj.num_steps()
    } else {
        config.rollout_steps.min(test_traj.num_steps())
    };
    let mut settings =
        RolloutSettings::replaying_truth(steps, model.hyper.history, model.hyper.radius);
    settings.mode = config.train.mode;
    let result = stage("rollout", || run_rollout(&model, test_traj, &settings))?;
    let pred_path = out_dir.join("pred_test.gnsstrj");
    result.to_trajectory(test_traj)?.write_to(&pred_path)?;

    println!("[4/4] evaluate");
    let truth_path = {
        // The test trajectory file is the last manifest entry with role test.
        let manifest = Manifest::read(&data_dir.join(MANIFEST_FILE))?;
        let entry = manifest
            .entries
            .iter()
            .find(|e| e.role == SplitRole::Test)
            .ok_or_else(|| CoreError::Config("manifest lists no test trajectory".into()))?;
        data_dir.join(&entry.file)
    };
    stage("evaluate", || {
        evaluate(
            &pred_path,
            &truth_path,
            &out_dir.join("eval_report.tsv"),
            config.train.history,
            (30e-6, 100e-6),
            &[1e-6, 50e-6, 99e-6],
        )
    })?;

    // Summary plus acceptance-style thresholds: the training loss must fall
    // by 10x and the rollout must stay finite.
    let initial = report.mean_loss(0..20);
    let final_loss = report.mean_loss(report.losses.len().saturating_sub(100)..report.losses.len());
    let reduction = initial / final_loss;
    let mse = rollout_mse(&result.frames, test_traj, result.seed_len);
    let mut summary = String::from("key\tvalue\n");
    summary.push_str(&format!("mode\t{}\n", config.train.mode.as_str()));
    summary.push_str(&format!("initial_loss\t{initial:e}\n"));
    summary.push_str(&format!("final_loss\t{final_loss:e}\n"));
    summary.push_str(&format!("loss_reduction\t{reduction:.3}\n"));
    summary.push_str(&format!("test_rollout_mse\t{mse:e}\n"));
    summary.push_str(&format!("diverged\t{}\n", u8::from(result.diverged)));
    fs::write(out_dir.join("summary.tsv"), summary)?;
    println!(
        "pipeline complete: loss reduction x{reduction:.2}, test rollout MSE {mse:.4e} m, diverged: {}",
        result.diverged
    );

    if result.diverged {
        return Ok(EXIT_DIVERGED);
    }
    if !(reduction >= 10.0) {
        return Ok(EXIT_ACCEPTANCE);
    }
    Ok(0)
}

fn generate_from_config(config: &GenerateConfig, out_dir: &Path) -> Result<u8> {
    // Round-trip through the key=value text so `pipeline` and `generate`
    // share one code path.
    let text = format!(
        "length_m = {}\nelement_size_m = {}\ne_pa = {}\nrho = {}\nnu = {}\nwidth_m = {}\n\
         height_m = {}\nfreq_hz = {}\namplitude_m = {}\nactuator_pos_m = {}\n\
         total_time_s = {}\ndt_s = {}\nmargin_m = {}\nseed = {}\n",
        config.length_m,
        config.element_size_m,
        config.e_pa,
        config.rho,
        config.nu,
        config.width_m,
        config.height_m,
        config.freq_hz,
        config.amplitude_m,
        config
            .actuator_pos_m
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
        config.total_time_s,
        config.dt_s,
        config.margin_m,
        config.seed
    );
    let tmp = out_dir.with_extension("generate.cfg");
    if let Some(parent) = tmp.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&tmp, text)?;
    let code = generate(&tmp, out_dir)?;
    fs::remove_file(&tmp)?;
    Ok(code)
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| {
        eprintln!("stage {name} failed");
        e
    })
}
