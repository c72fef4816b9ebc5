//! The posture embedding: a small normalized encoder trained with a triplet
//! ranking loss on correspondences proposed by the sequence matcher.

mod baseline;
mod mining;
mod model;
mod train;

use ndarray::{Array2, ArrayView2};

use crate::error::Result;

pub use baseline::{Identity, RandomEmbedding, Whitener, WHITEN_SHRINKAGE};
pub use mining::{augment, coordinate_std, eligible_negatives, sample_triplets, sequence_neighbors, MiningParams, NegativeMining, Triplet};
pub use model::{triplet_loss, EmbeddingModel, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN};
pub use train::{train, BatchLog, EpochLog, TrainConfig, TrainLog};

/// Anything that maps a block of raw frames (rows) to embedded rows.
pub trait Embedder: Sync {
    fn input_dim(&self) -> usize;

    fn embed_frames(&self, frames: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn embed_frames(&self, frames: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        (**self).embed_frames(frames)
    }
}
