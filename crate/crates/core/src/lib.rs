//! Core library for the GNSS structural surrogate pipeline.
//!
//! The crate covers the full loop:
//! - an explicit central-difference Timoshenko beam solver that generates
//!   ground-truth wave-propagation trajectories ([`fem`]),
//! - conversion of trajectory windows into feature graphs with node-fixed
//!   local frames and radius-based connectivity ([`graph`]),
//! - a small f64 neural toolkit with reverse-mode gradients ([`nn`]),
//! - the encode-process-decode graph network and its Euler updater ([`model`]),
//! - training with velocity-noise injection and the sign-aware wMSE loss
//!   ([`train`]),
//! - autoregressive rollout, evaluation metrics, hyperparameter sweeps and
//!   runtime scaling measurements ([`rollout`], [`metrics`], [`sweep`]).

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fem;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rollout;
pub mod sweep;
pub mod train;
pub mod trajectory;

pub use error::{CoreError, Result};
pub use fem::{
    build_beam_model, dispersion_wavelength, hanning_pulse, run_explicit, stable_increment,
    BeamModel, ExcitationSpec, MaterialSection,
};
pub use graph::{
    assemble_feature_graph, build_topology, expected_degree, EdgeFeature, FeatureGraph, FrameMode,
    NodeFeature, VelocityHistory,
};
pub use dataset::Dataset;
pub use model::{GnssHyper, GnssModel, LatentGraph, StateWindow};

/// Cap worker parallelism process-wide (the GNSS_THREADS contract). Fails if
/// the global pool is already running.
pub fn set_worker_threads(threads: usize) -> std::result::Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}
pub use rollout::{rollout, Dynamics, OracleDynamics, RolloutResult, RolloutSettings};
pub use train::{train, wmse_loss, TrainConfig, TrainReport};
pub use trajectory::Trajectory;
