//! Node-type embedding table.

use ndarray::{Array2, ArrayView1};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Width of the type embedding vector.
pub const EMBEDDING_DIM: usize = 16;

/// Trainable lookup table: one 16-component row per node type id.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub weights: Array2<f64>,
}

impl EmbeddingTable {
    pub fn init(num_types: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (6.0 / EMBEDDING_DIM as f64).sqrt();
        Self {
            weights: Array2::from_shape_fn((num_types, EMBEDDING_DIM), |_| {
                rng.random_range(-limit..limit)
            }),
        }
    }

    pub fn num_types(&self) -> usize {
        self.weights.nrows()
    }

    /// Row for a type id. Gradients accumulate onto the same row.
    pub fn lookup(&self, type_id: u32) -> Result<ArrayView1<'_, f64>> {
        let idx = type_id as usize;
        if idx >= self.num_types() {
            return Err(CoreError::InvalidArgument(format!(
                "type id {type_id} out of range (num_types = {})",
                self.num_types()
            )));
        }
        Ok(self.weights.row(idx))
    }
}
