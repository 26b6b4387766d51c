//! Adaptive-moment optimizer over flat parameter slices.

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor, plus the
/// step counter. The tensor layout must match the declared parameter
/// traversal order of whatever model this state was created for.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub hyper: AdamHyper,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(hyper: AdamHyper, tensor_sizes: &[usize]) -> Self {
        Self {
            hyper,
            step: 0,
            first: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One optimizer step with bias correction. If any gradient entry is
/// non-finite the step is skipped, the counter stays unchanged, and the event
/// is logged; returns whether the step was applied.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
) -> bool {
    assert_eq!(params.len(), grads.len(), "parameter/gradient tensor count");
    assert_eq!(params.len(), state.first.len(), "optimizer state tensor count");
    for (p, g) in params.iter().zip(grads.iter()) {
        assert_eq!(p.len(), g.len(), "parameter/gradient tensor size");
    }
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        log::warn!("skipping optimizer step {}: non-finite gradient", state.step + 1);
        return false;
    }
    state.step += 1;
    let t = state.step as i32;
    let AdamHyper {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.hyper;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for i in 0..p.len() {
            let grad = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad;
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad * grad;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    true
}
