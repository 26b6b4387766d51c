//! The encode-process-decode graph network and its Euler-integration updater.
//!
//! A forward pass embeds raw node/edge features into a 64-dimensional latent
//! space, runs M rounds of message passing (construction, summed aggregation,
//! node update, each round with its own MLPs), and decodes per-node
//! accelerations in standardized units. The updater advances the kinematic
//! state with unit-timestep Euler integration and overrides prescribed nodes.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::graph::{
    build_topology, edge_features, edge_features_absolute, working_precision, EdgeFeature,
    FeatureGraph, FrameMode, NodeFeature, VelocityHistory,
};
use crate::nn::{
    adam_step, mlp_init, Activation, EmbeddingTable, MlpGrads, MlpParams, MlpSpec, MlpTape,
    OptimizerState, EMBEDDING_DIM,
};
use crate::trajectory::{Trajectory, NODE_TYPE_ACTUATOR, NODE_TYPE_CLAMPED};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssHyper {
    /// Spatial dimension d.
    pub space_dim: usize,
    /// Number of previous velocities n (n+1 velocities total).
    pub history: usize,
    /// Latent width h.
    pub latent: usize,
    /// Message-passing rounds M.
    pub message_steps: usize,
    /// Connectivity radius in meters.
    pub radius: f64,
    /// Size of the type-embedding table.
    pub num_types: usize,
    /// Layer-normalize encoder and processor MLP outputs.
    pub layer_norm: bool,
    /// Add residual connections across rounds (ablation, off by default).
    pub residual: bool,
}

impl GnssHyper {
    /// The standard configuration: d=2, n=4, h=64, 8 reserved node types.
    pub fn standard(radius: f64, message_steps: usize) -> Self {
        Self {
            space_dim: 2,
            history: 4,
            latent: 64,
            message_steps,
            radius,
            num_types: 8,
            layer_norm: true,
            residual: false,
        }
    }

    /// Raw node feature width: d*(n+1) velocities plus the type embedding.
    pub fn node_input_dim(&self) -> usize {
        self.space_dim * (self.history + 1) + EMBEDDING_DIM
    }

    /// Raw edge feature width: relative position plus distance.
    pub fn edge_input_dim(&self) -> usize {
        self.space_dim + 1
    }

    pub fn velocity_dim(&self) -> usize {
        self.space_dim * (self.history + 1)
    }
}

/// Per-component standardization statistics for the acceleration targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl AccelStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0, 0.0],
            std: [1.0, 1.0],
        }
    }

    pub fn standardize(&self, raw: &Array2<f64>) -> Array2<f64> {
        let mut out = raw.clone();
        for mut row in out.rows_mut() {
            for c in 0..2 {
                row[c] = (row[c] - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn destandardize(&self, standardized: &Array2<f64>) -> Array2<f64> {
        let mut out = standardized.clone();
        for mut row in out.rows_mut() {
            for c in 0..2 {
                row[c] = row[c] * self.std[c] + self.mean[c];
            }
        }
        out
    }
}

/// Latent graph state: per-node and per-edge 64-vectors.
#[derive(Debug, Clone)]
pub struct LatentGraph {
    pub node_latents: Array2<f64>,
    pub edge_latents: Array2<f64>,
}

/// All trainable parameters of the simulator.
#[derive(Debug, Clone)]
pub struct GnssModel {
    pub hyper: GnssHyper,
    pub encoder_node: MlpParams,
    pub encoder_edge: MlpParams,
    pub message_mlps: Vec<MlpParams>,
    pub update_mlps: Vec<MlpParams>,
    pub decoder: MlpParams,
    pub embedding: EmbeddingTable,
    pub accel_stats: AccelStats,
}

impl GnssModel {
    /// Deterministic initialization: every MLP and the embedding draw their
    /// own sub-seed from a master stream in declared order.
    pub fn init(hyper: GnssHyper, seed: u64) -> Result<Self> {
        if hyper.message_steps == 0 {
            return Err(CoreError::InvalidArgument(
                "message_steps must be >= 1".into(),
            ));
        }
        let h = hyper.latent;
        let ln = hyper.layer_norm;
        let enc_node_spec =
            MlpSpec::new(hyper.node_input_dim(), vec![64, 64], h, Activation::Relu, ln)?;
        let enc_edge_spec =
            MlpSpec::new(hyper.edge_input_dim(), vec![64, 64], h, Activation::Relu, ln)?;
        let message_spec = MlpSpec::new(3 * h, vec![64, 64], h, Activation::Relu, ln)?;
        let update_spec = MlpSpec::new(2 * h, vec![64, 64], h, Activation::Relu, ln)?;
        let decoder_spec = MlpSpec::new(
            h,
            vec![128, 128],
            hyper.space_dim,
            Activation::Relu,
            false,
        )?;

        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut sub = || master.random::<u64>();
        let encoder_node = mlp_init(&enc_node_spec, sub());
        let encoder_edge = mlp_init(&enc_edge_spec, sub());
        let message_mlps = (0..hyper.message_steps)
            .map(|_| mlp_init(&message_spec, sub()))
            .collect();
        let update_mlps = (0..hyper.message_steps)
            .map(|_| mlp_init(&update_spec, sub()))
            .collect();
        let decoder = mlp_init(&decoder_spec, sub());
        let embedding = EmbeddingTable::init(hyper.num_types, sub());
        Ok(Self {
            hyper,
            encoder_node,
            encoder_edge,
            message_mlps,
            update_mlps,
            decoder,
            embedding,
            accel_stats: AccelStats::identity(),
        })
    }

    pub fn num_params(&self) -> usize {
        let mut count = 0;
        self.visit(&mut |s: &[f64]| count += s.len());
        count
    }

    /// Visit every parameter tensor in declared order: node encoder, edge
    /// encoder, message MLPs, update MLPs, decoder, embedding.
    pub fn visit<'a, F: FnMut(&'a [f64])>(&'a self, f: &mut F) {
        self.encoder_node.visit(f);
        self.encoder_edge.visit(f);
        for m in &self.message_mlps {
            m.visit(f);
        }
        for u in &self.update_mlps {
            u.visit(f);
        }
        self.decoder.visit(f);
        f(self.embedding.weights.as_slice().unwrap());
    }

    pub fn visit_mut<'a, F: FnMut(&'a mut [f64])>(&'a mut self, f: &mut F) {
        self.encoder_node.visit_mut(f);
        self.encoder_edge.visit_mut(f);
        for m in &mut self.message_mlps {
            m.visit_mut(f);
        }
        for u in &mut self.update_mlps {
            u.visit_mut(f);
        }
        self.decoder.visit_mut(f);
        f(self.embedding.weights.as_slice_mut().unwrap());
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        self.visit(&mut |s: &[f64]| sizes.push(s.len()));
        sizes
    }

    /// Assemble the (N, d(n+1)+16) encoder input: velocity history columns
    /// followed by the type embedding.
    fn node_input_matrix(&self, fg: &FeatureGraph) -> Result<Array2<f64>> {
        let vel_dim = self.hyper.velocity_dim();
        let mut x = Array2::zeros((fg.num_nodes(), self.hyper.node_input_dim()));
        for (i, nf) in fg.node_features.iter().enumerate() {
            if nf.velocity_flat.len() != vel_dim {
                return Err(CoreError::DimMismatch {
                    expected: vel_dim,
                    got: nf.velocity_flat.len(),
                });
            }
            for (c, &v) in nf.velocity_flat.iter().enumerate() {
                x[[i, c]] = v;
            }
            let emb = self.embedding.lookup(nf.type_id)?;
            for (c, &v) in emb.iter().enumerate() {
                x[[i, vel_dim + c]] = v;
            }
        }
        Ok(x)
    }

    fn edge_input_matrix(&self, fg: &FeatureGraph) -> Array2<f64> {
        let mut x = Array2::zeros((fg.num_edges(), self.hyper.edge_input_dim()));
        for (k, ef) in fg.edge_features.iter().enumerate() {
            x[[k, 0]] = ef.rel_position[0];
            x[[k, 1]] = ef.rel_position[1];
            x[[k, 2]] = ef.distance;
        }
        x
    }
}

/// Embed raw features into the initial latent graph G^0.
pub fn encode(fg: &FeatureGraph, model: &GnssModel) -> Result<LatentGraph> {
    let node_in = model.node_input_matrix(fg)?;
    let edge_in = model.edge_input_matrix(fg);
    Ok(LatentGraph {
        node_latents: model.encoder_node.infer_batch(node_in.view())?,
        edge_latents: model.encoder_edge.infer_batch(edge_in.view())?,
    })
}

/// One message-passing round: construct messages from (v_i, v_j, e_ij),
/// aggregate by summing incoming messages, update nodes from (v_i, vbar_i).
/// Both updated latent sets carry to the next round.
pub fn message_pass_round(
    g: &LatentGraph,
    edges: &[[usize; 2]],
    round: usize,
    model: &GnssModel,
) -> Result<LatentGraph> {
    if round >= model.hyper.message_steps {
        return Err(CoreError::InvalidArgument(format!(
            "round {round} out of range (M = {})",
            model.hyper.message_steps
        )));
    }
    let h = model.hyper.latent;
    let message_in = concat_edge_inputs(&g.node_latents, &g.edge_latents, edges, h);
    let messages = model.message_mlps[round].infer_batch(message_in.view())?;
    let aggregated = aggregate(&messages, edges, g.node_latents.nrows(), h);
    let update_in = concat_node_inputs(&g.node_latents, &aggregated);
    let mut updated = model.update_mlps[round].infer_batch(update_in.view())?;
    if model.hyper.residual {
        updated += &g.node_latents;
    }
    Ok(LatentGraph {
        node_latents: updated,
        edge_latents: messages,
    })
}

/// Decode per-node accelerations (standardized units) from the final latent
/// graph.
pub fn decode(g: &LatentGraph, model: &GnssModel) -> Result<Array2<f64>> {
    model.decoder.infer_batch(g.node_latents.view())
}

/// Full inference pass on a prepared feature graph, in standardized units.
pub fn forward_infer(model: &GnssModel, fg: &FeatureGraph) -> Result<Array2<f64>> {
    let mut g = encode(fg, model)?;
    for m in 0..model.hyper.message_steps {
        g = message_pass_round(&g, &fg.edges, m, model)?;
    }
    decode(&g, model)
}

/// Kinematic state window: the last n+2 stored frames plus static geometry.
/// In `Local` mode frames hold local displacements; in `Absolute` mode they
/// hold absolute positions that have passed through single-precision storage.
#[derive(Debug, Clone)]
pub struct StateWindow {
    pub frames: Vec<Array2<f64>>,
    pub rest_positions: Vec<[f64; 2]>,
    pub node_types: Vec<u32>,
    pub radius: f64,
    pub mode: FrameMode,
}

impl StateWindow {
    /// Seed a window from trajectory frames `t-n-1 ..= t`.
    pub fn from_trajectory(
        traj: &Trajectory,
        t: usize,
        n: usize,
        radius: f64,
        mode: FrameMode,
    ) -> Result<Self> {
        if t < n + 1 {
            return Err(CoreError::InvalidArgument(format!(
                "state window needs t >= n+1 ({}), got t={t}",
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
        let mut frames = Vec::with_capacity(n + 2);
        for step in (t - n - 1)..=t {
            let src = traj.frame(step);
            let mut frame = Array2::zeros((num_nodes, 2));
            for i in 0..num_nodes {
                for c in 0..2 {
                    frame[[i, c]] = match mode {
                        FrameMode::Local => src[[i, c]],
                        FrameMode::Absolute => {
                            working_precision(traj.rest_positions[i][c] + src[[i, c]])
                        }
                    };
                }
            }
            frames.push(frame);
        }
        Ok(Self {
            frames,
            rest_positions: traj.rest_positions.clone(),
            node_types: traj.node_types.clone(),
            radius,
            mode,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.rest_positions.len()
    }

    /// Number of previous velocities n; the window holds n+2 frames.
    pub fn history(&self) -> usize {
        self.frames.len() - 2
    }

    /// Finite-difference velocity histories over the stored frames.
    pub fn velocity_histories(&self) -> Vec<VelocityHistory> {
        let n = self.history();
        let num_nodes = self.num_nodes();
        let mut out = vec![VelocityHistory::new(2, n + 1); num_nodes];
        for k in 0..=n {
            let prev = &self.frames[k];
            let cur = &self.frames[k + 1];
            for i in 0..num_nodes {
                for dim in 0..2 {
                    out[i].set(dim, k, cur[[i, dim]] - prev[[i, dim]]);
                }
            }
        }
        out
    }

    /// Latest velocity frame, `frames[n+1] - frames[n]`.
    pub fn last_velocity(&self) -> Array2<f64> {
        let len = self.frames.len();
        &self.frames[len - 1] - &self.frames[len - 2]
    }

    /// Local displacement of the newest frame (mode-aware).
    pub fn current_local_displacements(&self) -> Array2<f64> {
        let last = self.frames.last().unwrap();
        match self.mode {
            FrameMode::Local => last.clone(),
            FrameMode::Absolute => {
                let mut out = last.clone();
                for i in 0..self.num_nodes() {
                    for c in 0..2 {
                        out[[i, c]] -= self.rest_positions[i][c];
                    }
                }
                out
            }
        }
    }

    /// Build the raw feature graph for the current window state.
    pub fn feature_graph(&self, edges: &[[usize; 2]]) -> FeatureGraph {
        let histories = self.velocity_histories();
        let node_features = histories
            .into_iter()
            .zip(&self.node_types)
            .map(|(h, &ty)| NodeFeature {
                velocity_flat: h.flat().to_vec(),
                type_id: ty,
            })
            .collect();
        let last = self.frames.last().unwrap();
        let edge_feats: Vec<EdgeFeature> = match self.mode {
            FrameMode::Local => edge_features(&self.rest_positions, last, edges, self.radius),
            FrameMode::Absolute => edge_features_absolute(last, edges, self.radius),
        };
        FeatureGraph {
            edges: edges.to_vec(),
            node_features,
            edge_features: edge_feats,
            radius: self.radius,
        }
    }
}

/// Prescribed local displacements for kinematic nodes at the next step.
#[derive(Debug, Clone, Default)]
pub struct PrescribedMotion {
    /// (node id, local displacement) pairs for actuator nodes.
    pub entries: Vec<(usize, [f64; 2])>,
}

impl PrescribedMotion {
    fn get(&self, node: usize) -> Option<[f64; 2]> {
        self.entries
            .iter()
            .find(|(i, _)| *i == node)
            .map(|(_, d)| *d)
    }
}

/// Euler update with unit timestep: v' = v + y, u' = u + v'. Actuator nodes
/// are overwritten with their prescribed waveform sample; clamped nodes are
/// pinned to zero displacement. The window advances in place and the new
/// frame is returned (in the window's storage convention).
pub fn update_state(
    window: &mut StateWindow,
    accel: &Array2<f64>,
    prescribed: &PrescribedMotion,
) -> Result<Array2<f64>> {
    let n = window.num_nodes();
    if accel.nrows() != n || accel.ncols() != 2 {
        return Err(CoreError::ShapeMismatch(format!(
            "acceleration shape {:?}, expected ({n}, 2)",
            accel.shape()
        )));
    }
    let velocity = window.last_velocity();
    let last = window.frames.last().unwrap();
    let mut next = Array2::zeros((n, 2));
    for i in 0..n {
        match window.node_types[i] {
            NODE_TYPE_ACTUATOR => {
                let d = prescribed.get(i).ok_or_else(|| {
                    CoreError::InvalidArgument(format!(
                        "missing prescribed sample for actuator node {i}"
                    ))
                })?;
                for c in 0..2 {
                    next[[i, c]] = match window.mode {
                        FrameMode::Local => d[c],
                        FrameMode::Absolute => {
                            working_precision(window.rest_positions[i][c] + d[c])
                        }
                    };
                }
            }
            NODE_TYPE_CLAMPED => {
                for c in 0..2 {
                    next[[i, c]] = match window.mode {
                        FrameMode::Local => 0.0,
                        FrameMode::Absolute => working_precision(window.rest_positions[i][c]),
                    };
                }
            }
            _ => {
                for c in 0..2 {
                    let v_next = velocity[[i, c]] + accel[[i, c]];
                    let value = last[[i, c]] + v_next;
                    next[[i, c]] = match window.mode {
                        FrameMode::Local => value,
                        FrameMode::Absolute => working_precision(value),
                    };
                }
            }
        }
    }
    window.frames.remove(0);
    window.frames.push(next.clone());
    Ok(next)
}

/// Full prediction: window -> feature graph -> encode -> M rounds -> decode
/// -> de-standardize. Returns physical (non-dimensional) accelerations.
pub fn predict_accelerations(window: &StateWindow, model: &GnssModel) -> Result<Array2<f64>> {
    if window.history() != model.hyper.history {
        return Err(CoreError::InvalidArgument(format!(
            "window history {} does not match model history {}",
            window.history(),
            model.hyper.history
        )));
    }
    let edges = build_topology(&window.rest_positions, window.radius)?;
    let fg = window.feature_graph(&edges);
    let standardized = forward_infer(model, &fg)?;
    Ok(model.accel_stats.destandardize(&standardized))
}

// ---------------------------------------------------------------------------
// Training-path forward/backward with tape.
// ---------------------------------------------------------------------------

struct RoundTape {
    message_tape: MlpTape,
    update_tape: MlpTape,
}

/// Recorded intermediates of one full forward pass.
pub struct GnssTape {
    edges: Vec<[usize; 2]>,
    type_ids: Vec<u32>,
    num_nodes: usize,
    enc_node_tape: MlpTape,
    enc_edge_tape: MlpTape,
    rounds: Vec<RoundTape>,
    decoder_tape: MlpTape,
}

/// Parameter gradients mirroring [`GnssModel`].
pub struct GnssGrads {
    pub encoder_node: MlpGrads,
    pub encoder_edge: MlpGrads,
    pub message: Vec<MlpGrads>,
    pub update: Vec<MlpGrads>,
    pub decoder: MlpGrads,
    pub embedding: Array2<f64>,
}

impl GnssGrads {
    pub fn zeros_like(model: &GnssModel) -> Self {
        Self {
            encoder_node: MlpGrads::zeros_like(&model.encoder_node),
            encoder_edge: MlpGrads::zeros_like(&model.encoder_edge),
            message: model.message_mlps.iter().map(MlpGrads::zeros_like).collect(),
            update: model.update_mlps.iter().map(MlpGrads::zeros_like).collect(),
            decoder: MlpGrads::zeros_like(&model.decoder),
            embedding: Array2::zeros(model.embedding.weights.raw_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &GnssGrads) {
        self.encoder_node.add_assign(&other.encoder_node);
        self.encoder_edge.add_assign(&other.encoder_edge);
        for (a, b) in self.message.iter_mut().zip(&other.message) {
            a.add_assign(b);
        }
        for (a, b) in self.update.iter_mut().zip(&other.update) {
            a.add_assign(b);
        }
        self.decoder.add_assign(&other.decoder);
        self.embedding += &other.embedding;
    }

    /// Same traversal order as [`GnssModel::visit`].
    pub fn visit<'a, F: FnMut(&'a [f64])>(&'a self, f: &mut F) {
        visit_mlp_grads(&self.encoder_node, f);
        visit_mlp_grads(&self.encoder_edge, f);
        for m in &self.message {
            visit_mlp_grads(m, f);
        }
        for u in &self.update {
            visit_mlp_grads(u, f);
        }
        visit_mlp_grads(&self.decoder, f);
        f(self.embedding.as_slice().unwrap());
    }
}

fn visit_mlp_grads<'a, F: FnMut(&'a [f64])>(g: &'a MlpGrads, f: &mut F) {
    for (w, b) in &g.layers {
        f(w.as_slice().unwrap());
        f(b.as_slice().unwrap());
    }
    if let Some((s, sh)) = &g.norm {
        f(s.as_slice().unwrap());
        f(sh.as_slice().unwrap());
    }
}

/// Tape-recording forward pass. Returns standardized accelerations.
pub fn forward_train(model: &GnssModel, fg: &FeatureGraph) -> Result<(Array2<f64>, GnssTape)> {
    let h = model.hyper.latent;
    let node_in = model.node_input_matrix(fg)?;
    let edge_in = model.edge_input_matrix(fg);
    let (mut node_latents, enc_node_tape) = model.encoder_node.forward_batch(node_in.view())?;
    let (mut edge_latents, enc_edge_tape) = model.encoder_edge.forward_batch(edge_in.view())?;
    let mut rounds = Vec::with_capacity(model.hyper.message_steps);
    for m in 0..model.hyper.message_steps {
        let message_in = concat_edge_inputs(&node_latents, &edge_latents, &fg.edges, h);
        let (messages, message_tape) =
            model.message_mlps[m].forward_batch(message_in.view())?;
        let aggregated = aggregate(&messages, &fg.edges, node_latents.nrows(), h);
        let update_in = concat_node_inputs(&node_latents, &aggregated);
        let (mut updated, update_tape) = model.update_mlps[m].forward_batch(update_in.view())?;
        if model.hyper.residual {
            updated += &node_latents;
        }
        node_latents = updated;
        edge_latents = messages;
        rounds.push(RoundTape {
            message_tape,
            update_tape,
        });
    }
    let (output, decoder_tape) = model.decoder.forward_batch(node_latents.view())?;
    let tape = GnssTape {
        edges: fg.edges.clone(),
        type_ids: fg.node_features.iter().map(|nf| nf.type_id).collect(),
        num_nodes: fg.num_nodes(),
        enc_node_tape,
        enc_edge_tape,
        rounds,
        decoder_tape,
    };
    Ok((output, tape))
}

/// Reverse-mode gradients of the recorded forward pass with respect to every
/// parameter, given the upstream gradient on the standardized output.
pub fn backward(
    model: &GnssModel,
    tape: &GnssTape,
    upstream: ArrayView2<'_, f64>,
) -> Result<GnssGrads> {
    let h = model.hyper.latent;
    let mut grads = GnssGrads::zeros_like(model);

    let (decoder_grads, mut d_nodes) = model.decoder.backward_batch(&tape.decoder_tape, upstream)?;
    grads.decoder = decoder_grads;
    let mut d_edges: Array2<f64> = Array2::zeros((tape.edges.len(), h));

    for m in (0..model.hyper.message_steps).rev() {
        let round = &tape.rounds[m];
        let (update_grads, d_update_in) =
            model.update_mlps[m].backward_batch(&round.update_tape, d_nodes.view())?;
        grads.update[m] = update_grads;
        let mut d_nodes_next: Array2<f64> = d_update_in.slice(s![.., 0..h]).to_owned();
        if model.hyper.residual {
            d_nodes_next += &d_nodes;
        }
        let d_aggregated = d_update_in.slice(s![.., h..2 * h]);

        // Aggregation backward: each edge (i, j) received d vbar_i.
        for (k, e) in tape.edges.iter().enumerate() {
            for c in 0..h {
                d_edges[[k, c]] += d_aggregated[[e[0], c]];
            }
        }
        let (message_grads, d_message_in) =
            model.message_mlps[m].backward_batch(&round.message_tape, d_edges.view())?;
        grads.message[m] = message_grads;

        // Concat backward: columns [v_i | v_j | e_ij].
        for (k, e) in tape.edges.iter().enumerate() {
            for c in 0..h {
                d_nodes_next[[e[0], c]] += d_message_in[[k, c]];
                d_nodes_next[[e[1], c]] += d_message_in[[k, h + c]];
            }
        }
        d_edges = d_message_in.slice(s![.., 2 * h..3 * h]).to_owned();
        d_nodes = d_nodes_next;
    }

    let (enc_node_grads, d_node_in) = model
        .encoder_node
        .backward_batch(&tape.enc_node_tape, d_nodes.view())?;
    grads.encoder_node = enc_node_grads;
    let (enc_edge_grads, _) = model
        .encoder_edge
        .backward_batch(&tape.enc_edge_tape, d_edges.view())?;
    grads.encoder_edge = enc_edge_grads;

    // Embedding gradient: the tail 16 columns of the node-encoder input
    // accumulate onto each node's type row.
    let vel_dim = model.hyper.velocity_dim();
    for i in 0..tape.num_nodes {
        let ty = tape.type_ids[i] as usize;
        for c in 0..EMBEDDING_DIM {
            grads.embedding[[ty, c]] += d_node_in[[i, vel_dim + c]];
        }
    }
    Ok(grads)
}

/// Apply one optimizer step to the whole model.
pub fn apply_adam(model: &mut GnssModel, grads: &GnssGrads, state: &mut OptimizerState) -> bool {
    let mut grad_slices: Vec<&[f64]> = Vec::new();
    grads.visit(&mut |s| grad_slices.push(s));
    let mut param_slices: Vec<&mut [f64]> = Vec::new();
    model.visit_mut(&mut |s| param_slices.push(s));
    adam_step(state, &mut param_slices, &grad_slices)
}

fn concat_edge_inputs(
    node_latents: &Array2<f64>,
    edge_latents: &Array2<f64>,
    edges: &[[usize; 2]],
    h: usize,
) -> Array2<f64> {
    let mut x = Array2::zeros((edges.len(), 3 * h));
    for (k, e) in edges.iter().enumerate() {
        for c in 0..h {
            x[[k, c]] = node_latents[[e[0], c]];
            x[[k, h + c]] = node_latents[[e[1], c]];
            x[[k, 2 * h + c]] = edge_latents[[k, c]];
        }
    }
    x
}

fn aggregate(messages: &Array2<f64>, edges: &[[usize; 2]], num_nodes: usize, h: usize) -> Array2<f64> {
    let mut agg = Array2::zeros((num_nodes, h));
    for (k, e) in edges.iter().enumerate() {
        for c in 0..h {
            agg[[e[0], c]] += messages[[k, c]];
        }
    }
    agg
}

fn concat_node_inputs(node_latents: &Array2<f64>, aggregated: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[node_latents.view(), aggregated.view()]).unwrap()
}
