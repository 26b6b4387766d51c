//! Feature-graph construction from trajectory windows.
//!
//! Topology is built once from rest positions with a fixed connectivity
//! radius. Node features are non-dimensional velocity histories (unit
//! timestep) plus a type id; edge features are current relative positions and
//! distances, both normalized by the radius. All kinematic quantities are
//! taken from node-fixed local frames so that the micrometer-scale
//! displacements never ride on top of meter-scale coordinates.

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::trajectory::Trajectory;

/// Coordinate convention for the feature pipeline.
///
/// `Local` is the native formulation: every kinematic quantity is a
/// displacement from the node's rest position, kept in f64. `Absolute` is the
/// comparison baseline: the pipeline state is the absolute nodal position
/// `rest + u`, stored at single precision the way conventional learned
/// simulators keep their position tensors, so finite differences between
/// nearly equal coordinates lose most of their significant digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameMode {
    Local,
    Absolute,
}

impl FrameMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(FrameMode::Local),
            "absolute" => Ok(FrameMode::Absolute),
            other => Err(CoreError::Config(format!(
                "mode must be 'local' or 'absolute', got '{other}'"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FrameMode::Local => "local",
            FrameMode::Absolute => "absolute",
        }
    }
}

/// Round through f32 storage, the precision loss modeled by
/// [`FrameMode::Absolute`].
#[inline]
pub fn working_precision(v: f64) -> f64 {
    v as f32 as f64
}

/// Per-node velocity history: `steps = n+1` finite-difference velocities in
/// `dims` spatial components, unit timestep. Entry order within a component
/// runs oldest to newest.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityHistory {
    pub dims: usize,
    pub steps: usize,
    values: Vec<f64>,
}

impl VelocityHistory {
    pub fn new(dims: usize, steps: usize) -> Self {
        Self {
            dims,
            steps,
            values: vec![0.0; dims * steps],
        }
    }

    /// Velocity component `dim` at history slot `k` (0 = oldest).
    #[inline]
    pub fn get(&self, dim: usize, k: usize) -> f64 {
        self.values[dim * self.steps + k]
    }

    #[inline]
    pub fn set(&mut self, dim: usize, k: usize, v: f64) {
        self.values[dim * self.steps + k] = v;
    }

    /// Flattened layout: all x-velocities oldest..newest, then all
    /// y-velocities.
    pub fn flat(&self) -> &[f64] {
        &self.values
    }
}

/// Raw node feature: flattened velocity history plus a type id resolved to an
/// embedding downstream.
#[derive(Debug, Clone)]
pub struct NodeFeature {
    pub velocity_flat: Vec<f64>,
    pub type_id: u32,
}

/// Raw edge feature, already normalized by the connectivity radius.
#[derive(Debug, Clone, Copy)]
pub struct EdgeFeature {
    pub rel_position: [f64; 2],
    pub distance: f64,
}

/// Per-timestep input graph: directed edge list (both directions stored), raw
/// node and edge features, and the radius they were normalized with.
#[derive(Debug, Clone)]
pub struct FeatureGraph {
    pub edges: Vec<[usize; 2]>,
    pub node_features: Vec<NodeFeature>,
    pub edge_features: Vec<EdgeFeature>,
    pub radius: f64,
}

impl FeatureGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_features.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Directed radius graph over rest positions: edges (i, j) for all i != j with
/// |rest_i - rest_j| <= radius. Cell-binned search, deterministic output order
/// (sorted by (i, j)).
pub fn build_topology(rest_positions: &[[f64; 2]], radius: f64) -> Result<Vec<[usize; 2]>> {
    if !(radius > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "connectivity radius must be positive, got {radius}"
        )));
    }
    let cell = |p: [f64; 2]| -> (i64, i64) {
        (
            (p[0] / radius).floor() as i64,
            (p[1] / radius).floor() as i64,
        )
    };
    let mut bins: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in rest_positions.iter().enumerate() {
        bins.entry(cell(p)).or_default().push(i);
    }
    // Nodes at exactly the radius belong to the neighborhood; tolerate the
    // rounding of coordinates that are not exactly representable.
    let r2 = radius * radius * (1.0 + 1e-9);
    let mut edges = Vec::new();
    for (i, &pi) in rest_positions.iter().enumerate() {
        let (cx, cy) = cell(pi);
        let mut neighbors = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(candidates) = bins.get(&(cx + dx, cy + dy)) {
                    for &j in candidates {
                        if j == i {
                            continue;
                        }
                        let pj = rest_positions[j];
                        let ddx = pi[0] - pj[0];
                        let ddy = pi[1] - pj[1];
                        if ddx * ddx + ddy * ddy <= r2 {
                            neighbors.push(j);
                        }
                    }
                }
            }
        }
        neighbors.sort_unstable();
        for j in neighbors {
            edges.push([i, j]);
        }
    }
    Ok(edges)
}

/// Expected degree of a node in a random geometric graph of the given
/// intensity (nodes per unit d-volume): intensity * kappa_d * R^d, with
/// kappa_1 = 2, kappa_2 = pi, kappa_3 = 4 pi / 3.
pub fn expected_degree(intensity: f64, radius: f64, dim: usize) -> Result<f64> {
    let kappa = match dim {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        other => {
            return Err(CoreError::InvalidArgument(format!(
                "dimension must be 1, 2 or 3, got {other}"
            )))
        }
    };
    Ok(intensity * kappa * radius.powi(dim as i32))
}

/// Finite-difference velocity histories at step `t` for every node:
/// history slot for lag k holds `u[t-k] - u[t-k-1]` (unit timestep), computed
/// on local-frame displacements. Requires `t >= n + 1`.
pub fn velocity_history(traj: &Trajectory, t: usize, n: usize) -> Result<Vec<VelocityHistory>> {
    if t < n + 1 {
        return Err(CoreError::InvalidArgument(format!(
            "velocity history needs t >= n+1 ({}), got t={t}",
            n + 1
        )));
    }
    if t >= traj.num_steps() {
        return Err(CoreError::InvalidArgument(format!(
            "t={t} out of range for trajectory with {} steps",
            traj.num_steps()
        )));
    }
    let num_nodes = traj.num_nodes();
    let steps = n + 1;
    let mut out = vec![VelocityHistory::new(2, steps); num_nodes];
    for k in 0..steps {
        let cur = traj.frame(t - k);
        let prev = traj.frame(t - k - 1);
        // Lag k lands at slot (n - k): slot 0 is the oldest velocity.
        let slot = n - k;
        for i in 0..num_nodes {
            for dim in 0..2 {
                out[i].set(dim, slot, cur[[i, dim]] - prev[[i, dim]]);
            }
        }
    }
    Ok(out)
}

/// Edge features at one timestep. The relative position is evaluated in split
/// form, rest offset plus displacement difference, so the micrometer-scale
/// part is never absorbed into a meter-scale coordinate before subtraction.
pub fn edge_features(
    rest_positions: &[[f64; 2]],
    displacements: &Array2<f64>,
    edges: &[[usize; 2]],
    radius: f64,
) -> Vec<EdgeFeature> {
    edges
        .iter()
        .map(|&[i, j]| {
            let mut rel = [0.0f64; 2];
            for dim in 0..2 {
                let rest = rest_positions[i][dim] - rest_positions[j][dim];
                let disp = displacements[[i, dim]] - displacements[[j, dim]];
                rel[dim] = (rest + disp) / radius;
            }
            EdgeFeature {
                rel_position: rel,
                distance: (rel[0] * rel[0] + rel[1] * rel[1]).sqrt(),
            }
        })
        .collect()
}

/// Edge features from absolute positions, the baseline formulation: the
/// coordinates are differenced directly, without the split evaluation.
pub fn edge_features_absolute(
    positions: &Array2<f64>,
    edges: &[[usize; 2]],
    radius: f64,
) -> Vec<EdgeFeature> {
    edges
        .iter()
        .map(|&[i, j]| {
            let rel = [
                (positions[[i, 0]] - positions[[j, 0]]) / radius,
                (positions[[i, 1]] - positions[[j, 1]]) / radius,
            ];
            EdgeFeature {
                rel_position: rel,
                distance: (rel[0] * rel[0] + rel[1] * rel[1]).sqrt(),
            }
        })
        .collect()
}

/// Build the full input graph for step `t` of a trajectory: radius topology
/// from rest geometry, velocity-history node features, normalized edge
/// features. In `Absolute` mode the kinematics first pass through
/// single-precision position storage.
pub fn assemble_feature_graph(
    traj: &Trajectory,
    t: usize,
    n: usize,
    radius: f64,
    mode: FrameMode,
) -> Result<FeatureGraph> {
    let window = crate::model::StateWindow::from_trajectory(traj, t, n, radius, mode)?;
    let edges = build_topology(&traj.rest_positions, radius)?;
    Ok(window.feature_graph(&edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn brute_force_topology(rest: &[[f64; 2]], radius: f64) -> Vec<[usize; 2]> {
        let mut edges = Vec::new();
        for i in 0..rest.len() {
            for j in 0..rest.len() {
                if i == j {
                    continue;
                }
                let dx = rest[i][0] - rest[j][0];
                let dy = rest[i][1] - rest[j][1];
                if (dx * dx + dy * dy).sqrt() <= radius {
                    edges.push([i, j]);
                }
            }
        }
        edges
    }

    #[test]
    fn three_collinear_nodes() {
        let rest = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let edges = build_topology(&rest, 1.0).unwrap();
        assert_eq!(edges, vec![[0, 1], [1, 0], [1, 2], [2, 1]]);
    }

    #[test]
    fn uniform_chain_interior_degree() {
        let spacing = 0.0008;
        let rest: Vec<[f64; 2]> = (0..101).map(|i| [i as f64 * spacing, 0.0]).collect();
        let edges = build_topology(&rest, 7.0 * spacing).unwrap();
        let mid = 50;
        let degree = edges.iter().filter(|e| e[0] == mid).count();
        assert_eq!(degree, 14);
    }

    #[test]
    fn edge_count_grows_linearly() {
        let spacing = 0.0008;
        let radius = 7.0 * spacing;
        let count = |n: usize| {
            let rest: Vec<[f64; 2]> = (0..n).map(|i| [i as f64 * spacing, 0.0]).collect();
            build_topology(&rest, radius).unwrap().len()
        };
        // Chain with 7 neighbors per side: |E| = 14 N - 56 exactly, so the
        // growth in N is linear with a constant boundary deficit.
        for n in [100usize, 200, 400, 800] {
            assert_eq!(count(n), 14 * n - 56);
        }
    }

    #[test]
    fn binned_topology_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(2..60);
            let rest: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let radius = rng.random_range(0.05..1.5);
            let mut fast = build_topology(&rest, radius).unwrap();
            let mut brute = brute_force_topology(&rest, radius);
            fast.sort_unstable();
            brute.sort_unstable();
            assert_eq!(fast, brute);
        }
    }

    #[test]
    fn expected_degree_values() {
        assert!((expected_degree(1.0 / 0.0008, 7.0 * 0.0008, 1).unwrap() - 14.0).abs() < 1e-12);
        assert_eq!(expected_degree(5.0, 0.0, 1).unwrap(), 0.0);
        let ball = expected_degree(1.0, 1.0, 3).unwrap();
        assert!((ball - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-12);
        assert!(expected_degree(1.0, 1.0, 4).is_err());
    }

    fn micro_trajectory(num_nodes: usize, num_steps: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rest: Vec<[f64; 2]> = (0..num_nodes).map(|i| [i as f64 * 0.0008, 0.0]).collect();
        let mut types = vec![0u32; num_nodes];
        types[num_nodes / 2] = 1;
        let mut disp = Array3::zeros((num_steps, num_nodes, 2));
        for t in 1..num_steps {
            for i in 0..num_nodes {
                for c in 0..2 {
                    disp[[t, i, c]] = rng.random_range(-1e-6..1e-6);
                }
            }
        }
        Trajectory::new(1e-7, rest, types, disp).unwrap()
    }

    #[test]
    fn velocity_history_basics() {
        // Constant displacement -> zero history; uniform drift -> constant.
        let rest = vec![[0.0, 0.0], [0.0008, 0.0]];
        let types = vec![1, 0];
        let mut disp = Array3::zeros((8, 2, 2));
        for t in 0..8 {
            for i in 0..2 {
                disp[[t, i, 0]] = 3e-6; // constant
                disp[[t, i, 1]] = t as f64 * 2e-7; // drift
            }
        }
        let traj = Trajectory::new(1e-7, rest, types, disp).unwrap();
        let hist = velocity_history(&traj, 6, 4).unwrap();
        for h in &hist {
            for k in 0..5 {
                assert_eq!(h.get(0, k), 0.0);
                assert!((h.get(1, k) - 2e-7).abs() < 1e-20);
            }
        }
        assert!(velocity_history(&traj, 4, 4).is_err());
    }

    /// Double-double subtraction: exact difference of two f64 values as a
    /// (hi, lo) pair. Extended-precision oracle for the cancellation check.
    fn two_diff(a: f64, b: f64) -> (f64, f64) {
        let s = a - b;
        let bb = a - s;
        let err = (a - (s + bb)) + (bb - b);
        (s, err)
    }

    #[test]
    fn velocity_history_matches_extended_precision_oracle() {
        let traj = micro_trajectory(12, 10, 3);
        let t = 7;
        let n = 4;
        let hist = velocity_history(&traj, t, n).unwrap();
        for i in 0..traj.num_nodes() {
            for k in 0..=n {
                let lag = n - k;
                for dim in 0..2 {
                    let a = traj.frame(t - lag)[[i, dim]];
                    let b = traj.frame(t - lag - 1)[[i, dim]];
                    let (hi, lo) = two_diff(a, b);
                    let exact = hi + lo;
                    let got = hist[i].get(dim, k);
                    if exact != 0.0 {
                        assert!(
                            ((got - exact) / exact).abs() < 1e-12,
                            "node {i} slot {k} dim {dim}: {got:e} vs {exact:e}"
                        );
                    } else {
                        assert_eq!(got, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn absolute_position_pipeline_loses_precision() {
        // The quantitative motivation for local frames: differencing
        // working-precision absolute positions degrades micrometer velocities.
        let traj = micro_trajectory(12, 10, 4);
        let t = 7;
        let local_hist = velocity_history(&traj, t, 4).unwrap();
        let mut worst_local = 0.0f64;
        let mut worst_abs = 0.0f64;
        for i in 0..traj.num_nodes() {
            for k in 0..=4 {
                let lag = 4 - k;
                for dim in 0..2 {
                    let u_cur = traj.frame(t - lag)[[i, dim]];
                    let u_prev = traj.frame(t - lag - 1)[[i, dim]];
                    let (hi, lo) = two_diff(u_cur, u_prev);
                    let exact = hi + lo;
                    if exact == 0.0 {
                        continue;
                    }
                    let rel_local = ((local_hist[i].get(dim, k) - exact) / exact).abs();
                    let p_cur = working_precision(traj.rest_positions[i][dim] + u_cur);
                    let p_prev = working_precision(traj.rest_positions[i][dim] + u_prev);
                    let rel_abs = (((p_cur - p_prev) - exact) / exact).abs();
                    worst_local = worst_local.max(rel_local);
                    worst_abs = worst_abs.max(rel_abs);
                }
            }
        }
        assert!(worst_local < 1e-12, "local error {worst_local:e}");
        assert!(
            worst_abs > worst_local,
            "absolute {worst_abs:e} should exceed local {worst_local:e}"
        );
    }

    #[test]
    fn edge_feature_values_and_antisymmetry() {
        let rest = vec![[0.0, 0.0], [0.0008, 0.0], [0.0016, 0.0]];
        let disp = Array2::zeros((3, 2));
        let edges = build_topology(&rest, 0.0056).unwrap();
        let feats = edge_features(&rest, &disp, &edges, 0.0056);
        let expect = 0.0008 / 0.0056;
        for (e, f) in edges.iter().zip(&feats) {
            let sign = if e[0] > e[1] { 1.0 } else { -1.0 };
            let hops = (e[0] as f64 - e[1] as f64).abs();
            assert!((f.rel_position[0] - sign * hops * expect).abs() < 1e-15);
            assert_eq!(f.rel_position[1], 0.0);
            assert!((f.distance - hops * expect).abs() < 1e-15);
        }
        // (j, i) mirrors (i, j) with negated rel_position, identical distance.
        for (k, e) in edges.iter().enumerate() {
            let rev = edges.iter().position(|r| r == &[e[1], e[0]]).unwrap();
            assert_eq!(feats[k].rel_position[0], -feats[rev].rel_position[0]);
            assert_eq!(feats[k].rel_position[1], -feats[rev].rel_position[1]);
            assert_eq!(feats[k].distance, feats[rev].distance);
        }
    }

    #[test]
    fn micro_displacements_barely_perturb_distances() {
        let traj = micro_trajectory(16, 10, 5);
        let radius = 7.0 * 0.0008;
        let edges = build_topology(&traj.rest_positions, radius).unwrap();
        let rest_feats = edge_features(
            &traj.rest_positions,
            &traj.frame(0).to_owned(),
            &edges,
            radius,
        );
        let moved = edge_features(
            &traj.rest_positions,
            &traj.frame(7).to_owned(),
            &edges,
            radius,
        );
        for (a, b) in rest_feats.iter().zip(&moved) {
            assert!(((a.distance - b.distance) / a.distance).abs() < 0.002);
        }
    }

    #[test]
    fn assemble_graph_zero_trajectory() {
        let rest = vec![[0.0, 0.0], [0.0008, 0.0], [0.0016, 0.0], [0.0024, 0.0]];
        let types = vec![0, 1, 0, 0];
        let disp = Array3::zeros((8, 4, 2));
        let traj = Trajectory::new(1e-7, rest, types, disp).unwrap();
        let fg = assemble_feature_graph(&traj, 6, 4, 0.002, FrameMode::Local).unwrap();
        for nf in &fg.node_features {
            assert!(nf.velocity_flat.iter().all(|&v| v == 0.0));
            assert_eq!(nf.velocity_flat.len(), 10);
        }
        for ef in &fg.edge_features {
            assert!(ef.distance > 0.0 && ef.distance <= 1.0);
        }
        assert_eq!(fg.node_features[1].type_id, 1);
    }

    #[test]
    fn topology_is_time_independent() {
        let traj = micro_trajectory(10, 10, 6);
        let a = assemble_feature_graph(&traj, 5, 4, 0.003, FrameMode::Local).unwrap();
        let b = assemble_feature_graph(&traj, 8, 4, 0.003, FrameMode::Local).unwrap();
        assert_eq!(a.edges, b.edges);
    }

    proptest! {
        /// Shifting all rest positions by a constant leaves node and edge
        /// features bit-identical (translation invariance of the
        /// representation).
        #[test]
        fn translation_invariance(shift_x in -100.0f64..100.0, shift_y in -100.0f64..100.0) {
            let traj = micro_trajectory(8, 8, 11);
            let shifted = Trajectory::new(
                traj.dt_ph,
                traj.rest_positions
                    .iter()
                    .map(|p| [p[0] + shift_x, p[1] + shift_y])
                    .collect(),
                traj.node_types.clone(),
                traj.displacements().clone(),
            ).unwrap();
            let fg = assemble_feature_graph(&traj, 6, 4, 0.003, FrameMode::Local).unwrap();
            let fg_shift = assemble_feature_graph(&shifted, 6, 4, 0.003, FrameMode::Local).unwrap();
            prop_assert_eq!(&fg.edges, &fg_shift.edges);
            for (a, b) in fg.node_features.iter().zip(&fg_shift.node_features) {
                prop_assert_eq!(&a.velocity_flat, &b.velocity_flat);
            }
            // Shifting the coordinates rounds the inputs themselves, so edge
            // features can move by a few ulps of the shifted scale.
            let tol = 8.0 * f64::EPSILON * (shift_x.abs().max(shift_y.abs()).max(1.0)) / 0.003;
            for (a, b) in fg.edge_features.iter().zip(&fg_shift.edge_features) {
                prop_assert!((a.rel_position[0] - b.rel_position[0]).abs() <= tol);
                prop_assert!((a.rel_position[1] - b.rel_position[1]).abs() <= tol);
                prop_assert!((a.distance - b.distance).abs() <= 2.0 * tol);
            }
        }
    }
}
