//! Dense multilayer perceptrons with explicit forward tapes and exact
//! reverse-mode gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Epsilon in the layer-norm denominator. The pipeline feeds raw
/// micrometer-scale kinematics into the encoders, so the variance of a
/// pre-norm activation row can legitimately be ~1e-16; the epsilon must sit
/// far below that for the normalization to stay scale-free, while still
/// guarding the all-zero row.
pub const LAYER_NORM_EPS: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(&self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

/// Shape and options of an MLP: input size, hidden layer sizes, output size,
/// hidden activation, and whether the output is layer-normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub output_norm: bool,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        output_norm: bool,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden_dims.iter().any(|&d| d == 0) {
            return Err(CoreError::InvalidArgument(
                "all MLP dimensions must be >= 1".into(),
            ));
        }
        if hidden_dims.is_empty() {
            return Err(CoreError::InvalidArgument(
                "hidden_dims must be non-empty".into(),
            ));
        }
        Ok(Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
            output_norm,
        })
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

/// One affine layer; weight is (fan_in, fan_out) so a batch forward is X . W.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Learnable per-feature normalization applied to the MLP output.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

/// All trainable parameters of one MLP.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub spec: MlpSpec,
    pub layers: Vec<DenseLayer>,
    pub norm: Option<LayerNorm>,
}

/// Variance-scaled uniform initialization (Var = 2 / fan_in), zero biases,
/// unit norm scale. Deterministic for a given seed.
pub fn mlp_init(spec: &MlpSpec, seed: u64) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for (fan_in, fan_out) in spec.layer_dims() {
        let limit = (6.0 / fan_in as f64).sqrt();
        let weight =
            Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit));
        layers.push(DenseLayer {
            weight,
            bias: Array1::zeros(fan_out),
        });
    }
    let norm = spec.output_norm.then(|| LayerNorm {
        scale: Array1::ones(spec.output_dim),
        shift: Array1::zeros(spec.output_dim),
    });
    MlpParams {
        spec: spec.clone(),
        layers,
        norm,
    }
}

/// Intermediates recorded by a batched forward pass.
pub struct MlpTape {
    /// `activations[k]` is the input to layer k; the last entry is the input
    /// to the output affine layer.
    activations: Vec<Array2<f64>>,
    /// Normalized rows and inverse standard deviations when the output is
    /// layer-normalized.
    norm_state: Option<(Array2<f64>, Array1<f64>)>,
}

/// Parameter gradients mirroring [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
    pub norm: Option<(Array1<f64>, Array1<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weight.raw_dim()),
                        Array1::zeros(l.bias.raw_dim()),
                    )
                })
                .collect(),
            norm: params.norm.as_ref().map(|n| {
                (
                    Array1::zeros(n.scale.raw_dim()),
                    Array1::zeros(n.shift.raw_dim()),
                )
            }),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
        if let (Some((s, sh)), Some((os, osh))) = (self.norm.as_mut(), other.norm.as_ref()) {
            *s += os;
            *sh += osh;
        }
    }
}

impl MlpParams {
    pub fn num_params(&self) -> usize {
        let mut count = 0;
        self.visit(&mut |s: &[f64]| count += s.len());
        count
    }

    /// Visit every parameter tensor as a flat slice, in a fixed declared
    /// order: per layer weight then bias, then norm scale and shift.
    pub fn visit<'a, F: FnMut(&'a [f64])>(&'a self, f: &mut F) {
        for layer in &self.layers {
            f(layer.weight.as_slice().unwrap());
            f(layer.bias.as_slice().unwrap());
        }
        if let Some(norm) = &self.norm {
            f(norm.scale.as_slice().unwrap());
            f(norm.shift.as_slice().unwrap());
        }
    }

    pub fn visit_mut<'a, F: FnMut(&'a mut [f64])>(&'a mut self, f: &mut F) {
        for layer in &mut self.layers {
            f(layer.weight.as_slice_mut().unwrap());
            f(layer.bias.as_slice_mut().unwrap());
        }
        if let Some(norm) = &mut self.norm {
            f(norm.scale.as_slice_mut().unwrap());
            f(norm.shift.as_slice_mut().unwrap());
        }
    }

    /// Batched forward pass: rows are independent samples. Records the tape
    /// needed by [`MlpParams::backward_batch`].
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, MlpTape)> {
        self.check_input(&x)?;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            activations.push(h);
            let last = k + 1 == self.layers.len();
            h = if last {
                z
            } else {
                z.mapv_into(|v| self.spec.activation.apply(v))
            };
        }
        let mut norm_state = None;
        if let Some(norm) = &self.norm {
            let (normalized, inv_std) = layer_norm_forward(&h);
            let mut y = &normalized * &norm.scale;
            y += &norm.shift;
            norm_state = Some((normalized, inv_std));
            h = y;
        }
        Ok((
            h,
            MlpTape {
                activations,
                norm_state,
            },
        ))
    }

    /// Forward pass without tape allocation, for inference-only paths.
    pub fn infer_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            let last = k + 1 == self.layers.len();
            h = if last {
                z
            } else {
                z.mapv_into(|v| self.spec.activation.apply(v))
            };
        }
        if let Some(norm) = &self.norm {
            let (normalized, _) = layer_norm_forward(&h);
            let mut y = &normalized * &norm.scale;
            y += &norm.shift;
            h = y;
        }
        Ok(h)
    }

    /// Exact reverse-mode gradients of the recorded forward pass. Returns the
    /// parameter gradients and the gradient with respect to the input batch.
    pub fn backward_batch(
        &self,
        tape: &MlpTape,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        let rows = tape.activations[0].nrows();
        if upstream.nrows() != rows || upstream.ncols() != self.spec.output_dim {
            return Err(CoreError::ShapeMismatch(format!(
                "upstream gradient {:?} does not match ({rows}, {})",
                upstream.shape(),
                self.spec.output_dim
            )));
        }
        let mut dy = upstream.to_owned();
        let mut grads = MlpGrads::zeros_like(self);
        if let Some(norm) = &self.norm {
            let (normalized, inv_std) = tape.norm_state.as_ref().expect("tape missing norm state");
            let (dscale, dshift, dz) = layer_norm_backward(norm, normalized, inv_std, &dy);
            let g = grads.norm.as_mut().unwrap();
            g.0 = dscale;
            g.1 = dshift;
            dy = dz;
        }
        for k in (0..self.layers.len()).rev() {
            let input = &tape.activations[k];
            let last = k + 1 == self.layers.len();
            let dpre = if last {
                dy
            } else {
                // Input of layer k+1 equals the post-activation of layer k;
                // for ReLU the mask is post > 0.
                let post = &tape.activations[k + 1];
                match self.spec.activation {
                    Activation::Relu => {
                        let mut d = dy;
                        d.zip_mut_with(post, |g, &p| {
                            if p <= 0.0 {
                                *g = 0.0;
                            }
                        });
                        d
                    }
                    Activation::Identity => dy,
                }
            };
            grads.layers[k].0 = input.t().dot(&dpre);
            grads.layers[k].1 = dpre.sum_axis(Axis(0));
            dy = dpre.dot(&self.layers[k].weight.t());
        }
        Ok((grads, dy))
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.spec.input_dim {
            return Err(CoreError::DimMismatch {
                expected: self.spec.input_dim,
                got: x.ncols(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(CoreError::InvalidArgument(
                "non-finite value in MLP input".into(),
            ));
        }
        Ok(())
    }
}

fn layer_norm_forward(z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let cols = z.ncols() as f64;
    let mut normalized = z.clone();
    let mut inv_std = Array1::zeros(z.nrows());
    for (mut row, inv) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / cols;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * is);
        *inv = is;
    }
    (normalized, inv_std)
}

fn layer_norm_backward(
    norm: &LayerNorm,
    normalized: &Array2<f64>,
    inv_std: &Array1<f64>,
    dy: &Array2<f64>,
) -> (Array1<f64>, Array1<f64>, Array2<f64>) {
    let cols = normalized.ncols() as f64;
    let dscale = (dy * normalized).sum_axis(Axis(0));
    let dshift = dy.sum_axis(Axis(0));
    let dxhat = dy * &norm.scale;
    let mut dz = Array2::zeros(normalized.raw_dim());
    for r in 0..normalized.nrows() {
        let xhat = normalized.row(r);
        let dxh = dxhat.row(r);
        let mean_dxh = dxh.sum() / cols;
        let mean_dxh_xhat = dxh
            .iter()
            .zip(xhat.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / cols;
        let is = inv_std[r];
        for c in 0..normalized.ncols() {
            dz[[r, c]] = is * (dxh[c] - mean_dxh - xhat[c] * mean_dxh_xhat);
        }
    }
    (dscale, dshift, dz)
}

/// Single-vector forward, the shape used by spec-level call sites and tests.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
    let view = ArrayView2::from_shape((1, x.len()), x)
        .map_err(|e| CoreError::ShapeMismatch(e.to_string()))?;
    let (y, tape) = params.forward_batch(view)?;
    Ok((y.row(0).to_vec(), tape))
}

/// Single-vector backward companion to [`mlp_forward`].
pub fn mlp_backward(
    params: &MlpParams,
    tape: &MlpTape,
    upstream: &[f64],
) -> Result<(MlpGrads, Vec<f64>)> {
    let view = ArrayView2::from_shape((1, upstream.len()), upstream)
        .map_err(|e| CoreError::ShapeMismatch(e.to_string()))?;
    let (grads, dx) = params.backward_batch(tape, view)?;
    Ok((grads, dx.row(0).to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn spec_64(norm: bool) -> MlpSpec {
        MlpSpec::new(64, vec![64, 64], 64, Activation::Relu, norm).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let spec = spec_64(true);
        let a = mlp_init(&spec, 42);
        let b = mlp_init(&spec, 42);
        let c = mlp_init(&spec, 43);
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.weight, lb.weight);
            assert_eq!(la.bias, lb.bias);
        }
        assert!(a
            .layers
            .iter()
            .zip(&c.layers)
            .any(|(la, lc)| la.weight != lc.weight));
    }

    #[test]
    fn init_variance_tracks_fan_in() {
        let spec = spec_64(false);
        let params = mlp_init(&spec, 7);
        for layer in &params.layers {
            let w = &layer.weight;
            let n = w.len() as f64;
            let mean = w.sum() / n;
            let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let target = 2.0 / w.nrows() as f64;
            assert!(
                (var - target).abs() < 0.2 * target,
                "var {var:e} vs target {target:e}"
            );
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::new(3, vec![4], 2, Activation::Relu, false).unwrap();
        let mut params = mlp_init(&spec, 1);
        for layer in &mut params.layers {
            layer.weight.fill(0.0);
            layer.bias.fill(0.0);
        }
        let (y, _) = mlp_forward(&params, &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_network_passes_input_through() {
        let spec = MlpSpec::new(4, vec![4], 4, Activation::Identity, false).unwrap();
        let mut params = mlp_init(&spec, 1);
        for layer in &mut params.layers {
            layer.weight.fill(0.0);
            for i in 0..4 {
                layer.weight[[i, i]] = 1.0;
            }
            layer.bias.fill(0.0);
        }
        let x = [0.25, -1.5, 3.0, 0.0];
        let (y, _) = mlp_forward(&params, &x).unwrap();
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn forward_matches_naive_reimplementation() {
        let spec = MlpSpec::new(5, vec![7, 6], 3, Activation::Relu, true).unwrap();
        let params = mlp_init(&spec, 99);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (y, _) = mlp_forward(&params, &x).unwrap();

        // Straightforward scalar-loop evaluation.
        let mut h = x.clone();
        for (k, layer) in params.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.bias.len()];
            for (j, out) in next.iter_mut().enumerate() {
                let mut acc = layer.bias[j];
                for (i, &hi) in h.iter().enumerate() {
                    acc += hi * layer.weight[[i, j]];
                }
                *out = acc;
            }
            if k + 1 < params.layers.len() {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            h = next;
        }
        if let Some(norm) = &params.norm {
            let n = h.len() as f64;
            let mean = h.iter().sum::<f64>() / n;
            let var = h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, v) in h.iter_mut().enumerate() {
                *v = (*v - mean) * is * norm.scale[j] + norm.shift[j];
            }
        }
        for (a, b) in y.iter().zip(&h) {
            let denom = b.abs().max(1e-300);
            assert!(((a - b) / denom).abs() < 1e-12, "{a:e} vs {b:e}");
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let spec = MlpSpec::new(2, vec![3], 1, Activation::Relu, false).unwrap();
        let params = mlp_init(&spec, 1);
        assert!(mlp_forward(&params, &[f64::NAN, 0.0]).is_err());
        assert!(mlp_forward(&params, &[f64::INFINITY, 0.0]).is_err());
        assert!(mlp_forward(&params, &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn linear_layer_input_gradient_is_w_transpose() {
        let spec = MlpSpec::new(3, vec![3], 2, Activation::Identity, false).unwrap();
        let mut params = mlp_init(&spec, 5);
        // Make the hidden layer the identity so the network is y = W2 x.
        params.layers[0].weight.fill(0.0);
        for i in 0..3 {
            params.layers[0].weight[[i, i]] = 1.0;
        }
        let x = [0.3, -0.7, 1.1];
        let (_, tape) = mlp_forward(&params, &x).unwrap();
        let upstream = [2.0, -1.0];
        let (_, dx) = mlp_backward(&params, &tape, &upstream).unwrap();
        let w = &params.layers[1].weight;
        for i in 0..3 {
            let expect = w[[i, 0]] * upstream[0] + w[[i, 1]] * upstream[1];
            assert_eq!(dx[i], expect);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = MlpSpec::new(4, vec![5], 3, Activation::Relu, true).unwrap();
        let params = mlp_init(&spec, 8);
        let (_, tape) = mlp_forward(&params, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let (grads, dx) = mlp_backward(&params, &tape, &[0.0, 0.0, 0.0]).unwrap();
        assert!(dx.iter().all(|&v| v == 0.0));
        for (w, b) in &grads.layers {
            assert!(w.iter().all(|&v| v == 0.0));
            assert!(b.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        let spec = MlpSpec::new(4, vec![6, 5], 3, Activation::Relu, true).unwrap();
        let params = mlp_init(&spec, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Scalar loss: weighted sum of outputs.
        let w_loss: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &MlpParams| -> f64 {
            let (y, _) = mlp_forward(p, &x).unwrap();
            y.iter().zip(&w_loss).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = mlp_forward(&params, &x).unwrap();
        let (grads, _) = mlp_backward(&params, &tape, &w_loss).unwrap();

        let mut flat_grads = Vec::new();
        grads.layers.iter().for_each(|(w, b)| {
            flat_grads.extend(w.iter().cloned());
            flat_grads.extend(b.iter().cloned());
        });
        if let Some((s, sh)) = &grads.norm {
            flat_grads.extend(s.iter().cloned());
            flat_grads.extend(sh.iter().cloned());
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let total = flat_grads.len();
        for _ in 0..60 {
            let idx = rng.random_range(0..total);
            let step = 1e-6;
            let mut plus = params.clone();
            let mut minus = params.clone();
            perturb(&mut plus, idx, step);
            perturb(&mut minus, idx, -step);
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
            let an = flat_grads[idx];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(
                ((an - fd) / denom).abs() < 1e-5,
                "param {idx}: analytic {an:e} vs fd {fd:e}"
            );
        }
    }

    fn perturb(params: &mut MlpParams, mut idx: usize, delta: f64) {
        params.visit_mut(&mut |slice: &mut [f64]| {
            if idx < slice.len() {
                slice[idx] += delta;
                idx = usize::MAX;
            } else if idx != usize::MAX {
                idx -= slice.len();
            }
        });
    }
}
