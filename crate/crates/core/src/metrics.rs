//! Evaluation metrics for predicted rollouts: rollout MSE, per-node spatial
//! RMSE grouped into beam segments, and temporal RMSE accumulation.

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::trajectory::Trajectory;

/// Mean Euclidean distance between predicted and ground-truth nodal
/// displacements, averaged over all evaluated frames and nodes. Seed frames
/// are excluded. Returns 0 when no frames are evaluated.
pub fn rollout_mse(pred_frames: &[Array2<f64>], truth: &Trajectory, seed_len: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (t, frame) in pred_frames.iter().enumerate().skip(seed_len) {
        let reference = truth.frame(t);
        for i in 0..truth.num_nodes() {
            let dx = frame[[i, 0]] - reference[[i, 0]];
            let dy = frame[[i, 1]] - reference[[i, 1]];
            sum += (dx * dx + dy * dy).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Convenience wrapper over trajectory pairs (used by the `evaluate` command).
pub fn rollout_mse_trajectories(pred: &Trajectory, truth: &Trajectory, seed_len: usize) -> Result<f64> {
    check_aligned(pred, truth)?;
    let frames: Vec<Array2<f64>> = (0..pred.num_steps()).map(|t| pred.frame(t).to_owned()).collect();
    Ok(rollout_mse(&frames, truth, seed_len))
}

fn check_aligned(pred: &Trajectory, truth: &Trajectory) -> Result<()> {
    if pred.num_nodes() != truth.num_nodes() {
        return Err(CoreError::DimMismatch {
            expected: truth.num_nodes(),
            got: pred.num_nodes(),
        });
    }
    if pred.num_steps() > truth.num_steps() {
        return Err(CoreError::InvalidArgument(format!(
            "prediction has {} frames, reference only {}",
            pred.num_steps(),
            truth.num_steps()
        )));
    }
    Ok(())
}

/// Per-node displacement-error RMSE over a physical time window, grouped into
/// equally sized segments along the beam. The actuator node is excluded from
/// the statistics. Returns one list of per-node RMSE values per segment.
pub fn spatial_rmse(
    pred_frames: &[Array2<f64>],
    truth: &Trajectory,
    segments: usize,
    window_seconds: (f64, f64),
) -> Result<Vec<Vec<f64>>> {
    let n = truth.num_nodes();
    if segments == 0 {
        return Err(CoreError::InvalidArgument("segments must be >= 1".into()));
    }
    if n <= segments {
        return Err(CoreError::InvalidArgument(format!(
            "need more than {segments} nodes, got {n}"
        )));
    }
    let t0 = (window_seconds.0 / truth.dt_ph).round() as usize;
    let t1 = ((window_seconds.1 / truth.dt_ph).round() as usize).min(pred_frames.len() - 1);
    if t0 > t1 {
        return Err(CoreError::InvalidArgument(format!(
            "empty evaluation window [{}, {}] s",
            window_seconds.0, window_seconds.1
        )));
    }
    let rmse = per_node_rmse(pred_frames, truth, t0, t1);

    // Nodes ordered along the beam, actuator dropped, split into contiguous
    // segments whose sizes differ by at most one.
    let mut order: Vec<usize> = (0..n).filter(|&i| i != truth.actuator_node).collect();
    order.sort_by(|&a, &b| {
        truth.rest_positions[a][0]
            .partial_cmp(&truth.rest_positions[b][0])
            .unwrap()
    });
    let total = order.len();
    let base = total / segments;
    let extra = total % segments;
    let mut out = Vec::with_capacity(segments);
    let mut cursor = 0usize;
    for s in 0..segments {
        let len = base + usize::from(s < extra);
        let chunk = &order[cursor..cursor + len];
        out.push(chunk.iter().map(|&i| rmse[i]).collect());
        cursor += len;
    }
    Ok(out)
}

/// Per-node RMSE aggregated over the post-seed frames up to each requested
/// time. Returns one list (all nodes) per entry of `t_list_seconds`.
pub fn temporal_rmse(
    pred_frames: &[Array2<f64>],
    truth: &Trajectory,
    t_list_seconds: &[f64],
    seed_len: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(t_list_seconds.len());
    for &t_sec in t_list_seconds {
        let t_idx = ((t_sec / truth.dt_ph).round() as usize).min(pred_frames.len() - 1);
        if t_idx < seed_len {
            return Err(CoreError::InvalidArgument(format!(
                "time {t_sec} s falls inside the seed window"
            )));
        }
        out.push(per_node_rmse(pred_frames, truth, seed_len, t_idx));
    }
    Ok(out)
}

fn per_node_rmse(
    pred_frames: &[Array2<f64>],
    truth: &Trajectory,
    t0: usize,
    t1: usize,
) -> Vec<f64> {
    let n = truth.num_nodes();
    let mut acc = vec![0.0f64; n];
    let mut frames = 0usize;
    for t in t0..=t1 {
        if t >= pred_frames.len() {
            break;
        }
        let p = &pred_frames[t];
        let r = truth.frame(t);
        for (i, a) in acc.iter_mut().enumerate() {
            let dx = p[[i, 0]] - r[[i, 0]];
            let dy = p[[i, 1]] - r[[i, 1]];
            *a += dx * dx + dy * dy;
        }
        frames += 1;
    }
    if frames == 0 {
        return vec![0.0; n];
    }
    acc.into_iter().map(|v| (v / frames as f64).sqrt()).collect()
}

/// Fixed-width histogram over [min, max]; consumers can re-bin the raw values
/// however they like, this is just for the report bundle.
pub fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    if values.is_empty() || bins == 0 {
        return (Vec::new(), Vec::new());
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if max > min {
        (max - min) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let mut idx = ((v - min) / width) as usize;
        if idx >= bins {
            idx = bins - 1;
        }
        counts[idx] += 1;
    }
    let edges = (0..=bins).map(|k| min + k as f64 * width).collect();
    (edges, counts)
}
