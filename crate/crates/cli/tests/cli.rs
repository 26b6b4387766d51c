//! End-to-end tests of the command-line surface: every subcommand is driven
//! through the real binary on a desk-scale configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gnss() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gnss"))
}

fn run(args: &[&str]) -> Output {
    gnss()
        .args(args)
        .env("GNSS_THREADS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Small beam, short span: enough steps for windows (n+3 = 7) and quick runs.
const TINY_GENERATE: &str = "length_m = 0.048\n\
    element_size_m = 0.0008\n\
    actuator_pos_m = 0.020, 0.0256, 0.0288\n\
    total_time_s = 3e-5\n\
    margin_m = 0.008\n";

#[test]
fn generate_inspect_and_tamper_detection() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "gen.cfg", TINY_GENERATE);
    let data = dir.path().join("data");

    let out = run(&["generate", "--config", config.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(data.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 4); // header + 3 entries
    assert!(manifest.contains("train"));
    assert!(manifest.contains("test"));

    let traj = data.join("traj_000.gnsstrj");
    let out = run(&["inspect", traj.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("nodes:"), "{text}");
    assert!(text.contains("checksum:"), "{text}");
    assert!(text.contains("checksum OK"), "{text}");

    // Flip one payload byte: inspect must report the mismatch.
    let mut bytes = fs::read(&traj).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x01;
    fs::write(&traj, &bytes).unwrap();
    let out = run(&["inspect", traj.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("CHECKSUM MISMATCH"));

    // Truncated file: the error names the missing section.
    fs::write(&traj, &bytes[..bytes.len() - 40]).unwrap();
    let out = run(&["inspect", traj.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("displacements"));
}

#[test]
fn generate_rejects_bad_configs_with_config_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");

    // Duplicate actuator positions.
    let dup = write_config(
        dir.path(),
        "dup.cfg",
        "length_m = 0.048\nactuator_pos_m = 0.02, 0.02\ntotal_time_s = 1e-5\nmargin_m = 0.008\n",
    );
    let out = run(&["generate", "--config", dup.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // Unknown key.
    let unknown = write_config(dir.path(), "unknown.cfg", "lenght_m = 0.048\n");
    let out = run(&["generate", "--config", unknown.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    // Non-divisible element size: the message carries the nearest valid count.
    let baddiv = write_config(
        dir.path(),
        "baddiv.cfg",
        "length_m = 0.0483\nactuator_pos_m = 0.02\ntotal_time_s = 1e-5\n",
    );
    let out = run(&["generate", "--config", baddiv.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("elements"));
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "gen.cfg", TINY_GENERATE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&["generate", "--config", config.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.success());
    assert!(run(&["generate", "--config", config.to_str().unwrap(), "--out", b.to_str().unwrap()]).status.success());
    for name in ["traj_000.gnsstrj", "traj_001.gnsstrj", "manifest.tsv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn train_rollout_evaluate_flow() {
    let dir = tempfile::tempdir().unwrap();
    let gen_cfg = write_config(dir.path(), "gen.cfg", TINY_GENERATE);
    let data = dir.path().join("data");
    assert!(run(&["generate", "--config", gen_cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]).status.success());

    // A deliberately tiny training run: the flow is what is under test.
    let train_cfg = write_config(
        dir.path(),
        "train.cfg",
        "steps = 6\nbatch_size = 1\nmessage_steps = 2\nradius_multiple = 3\nseed = 9\nvalidation_cadence = 3\nval_rollout_steps = 12\n",
    );
    let model = dir.path().join("model.gnssmdl");
    let out = run(&[
        "train",
        "--config", train_cfg.to_str().unwrap(),
        "--data", data.to_str().unwrap(),
        "--out", model.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(model.exists());
    let report = fs::read_to_string(model.with_extension("report.tsv")).unwrap();
    assert!(report.starts_with("step\tloss\tval_mse\tseconds"));
    assert_eq!(report.lines().count(), 7); // header + 6 steps

    let truth = data.join("traj_002.gnsstrj");
    let pred = dir.path().join("pred.gnsstrj");
    let out = run(&[
        "rollout",
        "--model", model.to_str().unwrap(),
        "--data", truth.to_str().unwrap(),
        "--steps", "60",
        "--out", pred.to_str().unwrap(),
    ]);
    let code = out.status.code();
    assert!(
        code == Some(0) || code == Some(3),
        "unexpected exit {code:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(pred.exists());

    let eval_report = dir.path().join("eval.tsv");
    let out = run(&[
        "evaluate",
        "--pred", pred.to_str().unwrap(),
        "--truth", truth.to_str().unwrap(),
        "--report", eval_report.to_str().unwrap(),
        "--window-start-us", "2",
        "--window-end-us", "5",
        "--times-us", "1,2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&eval_report).unwrap();
    assert!(text.starts_with("metric\tgroup\tindex\tvalue"));
    assert!(text.contains("rollout_mse"));
    assert!(text.contains("spatial_rmse"));
    assert!(text.contains("temporal_rmse"));
}

#[test]
fn missing_files_fail_cleanly() {
    let out = run(&["inspect", "/nonexistent/file.gnsstrj"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["rollout", "--model", "/no.mdl", "--data", "/no.trj", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_runs_at_small_sizes() {
    // Not the acceptance-scale study, just the command surface.
    let out = run(&["bench", "--sizes", "40,80,160", "--total-time-us", "2", "--reps", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("slopes"), "{text}");
}
