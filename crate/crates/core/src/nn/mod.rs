//! Minimal differentiable building blocks: dense MLPs with a reverse-mode
//! tape, layer normalization, an embedding table, and an adaptive-moment
//! optimizer. Everything is f64 and bit-reproducible given a seed.

mod adam;
mod embedding;
mod mlp;

pub use adam::{adam_step, AdamHyper, OptimizerState};
pub use embedding::{EmbeddingTable, EMBEDDING_DIM};
pub use mlp::{
    mlp_backward, mlp_forward, mlp_init, Activation, DenseLayer, LayerNorm, MlpGrads, MlpParams,
    MlpSpec, MlpTape, LAYER_NORM_EPS,
};
