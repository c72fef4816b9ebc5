//! Alternating matching / triplet training of the posture embedding.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::align::{chunk_target, match_embedded, PenaltySpec};
use crate::base::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngState;

use super::baseline::Whitener;
use super::mining::{augment, coordinate_std, sample_triplets, sequence_neighbors, MiningParams, NegativeMining, Triplet};
use super::model::{EmbeddingModel, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN};
use super::Embedder;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub triplets_per_batch: usize,
    pub margin: f64,
    pub percentile_start: f64,
    pub percentile_step: f64,
    pub percentile_floor: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Stop once an epoch moves the parameters by at most this much (l2).
    pub epsilon: f64,
    pub neighbors: usize,
    pub exclusion_window: usize,
    pub augment_sigma: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Sequence pairs per epoch; 0 means one per sequence.
    pub pairs_per_epoch: usize,
    pub mining: NegativeMining,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            triplets_per_batch: 300,
            margin: 0.2,
            percentile_start: 100.0,
            percentile_step: 10.0,
            percentile_floor: 30.0,
            learning_rate: 0.01,
            momentum: 0.9,
            max_epochs: 10,
            epsilon: 1e-4,
            neighbors: 10,
            exclusion_window: 2,
            augment_sigma: 0.05,
            hidden_dim: DEFAULT_HIDDEN,
            embed_dim: DEFAULT_EMBED_DIM,
            pairs_per_epoch: 0,
            mining: NegativeMining::Closest,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.triplets_per_batch < 1 {
            return bad("triplets_per_batch must be >= 1");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be > 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        for (name, p) in [
            ("percentile_start", self.percentile_start),
            ("percentile_floor", self.percentile_floor),
        ] {
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 100]")));
            }
        }
        if !(self.percentile_step >= 0.0) {
            return bad("percentile_step must be >= 0");
        }
        if !(self.epsilon >= 0.0) || !(self.augment_sigma >= 0.0) {
            return bad("epsilon and augment_sigma must be >= 0");
        }
        if self.max_epochs == 0 || self.hidden_dim == 0 || self.embed_dim == 0 || self.neighbors == 0 {
            return bad("max_epochs, hidden_dim, embed_dim and neighbors must be positive");
        }
        Ok(())
    }

    /// Negative-mining percentile for an epoch: decreases linearly, floored.
    pub fn percentile_at(&self, epoch: usize) -> f64 {
        (self.percentile_start - self.percentile_step * epoch as f64).max(self.percentile_floor.min(self.percentile_start))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub epoch: usize,
    pub query: String,
    pub target: String,
    pub chunk_offset: usize,
    pub triplets: usize,
    pub loss: f64,
    pub percentile: f64,
    pub param_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub percentile: f64,
    pub batches: usize,
    pub mean_loss: f64,
    pub param_delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub batches: Vec<BatchLog>,
    pub epochs: Vec<EpochLog>,
    pub converged: bool,
}

/// Learns an embedding from unlabeled sequences.
///
/// Each epoch: pick a query sequence uniformly, pick a partner among its
/// nearest sequences, match the pair chunk by chunk, and take one momentum
/// step on the triplet loss for every chunk matching. The first epoch
/// measures similarity with whitened raw features; later epochs use the
/// current model.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    penalties: &PenaltySpec,
    chunk_len: usize,
    rng: &mut RngState,
) -> Result<(EmbeddingModel, TrainLog)> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::config("training needs at least two sequences"));
    }
    chunk_target(2, chunk_len)?;

    let f = dataset.dim();
    let mut model = EmbeddingModel::random(f, config.hidden_dim, config.embed_dim, &mut rng.fork(0));
    let mut velocity = vec![0.0; model.params().len()];
    let whitener = Whitener::fit(dataset)?;
    let coord_std = coordinate_std(dataset);
    let k = config.neighbors.min(dataset.len() - 1);
    let pairs = if config.pairs_per_epoch == 0 {
        dataset.len()
    } else {
        config.pairs_per_epoch
    };

    let mut log = TrainLog::default();
    for epoch in 0..config.max_epochs {
        let percentile = config.percentile_at(epoch);
        let start = model.params().to_vec();
        let neighbors = if epoch == 0 {
            sequence_neighbors(dataset, &whitener, k)?
        } else {
            sequence_neighbors(dataset, &model, k)?
        };
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0;

        for _ in 0..pairs {
            let qi = rng.index(dataset.len());
            let query = &dataset.sequences()[qi];
            let partners = &neighbors[&query.id];
            let target = dataset.get(&partners[rng.index(partners.len())]).expect("neighbour ids are dataset ids");

            let (q_emb, t_emb) = if epoch == 0 {
                (whitener.embed_frames(query.frames())?, whitener.embed_frames(target.frames())?)
            } else {
                (model.embed_frames(query.frames())?, model.embed_frames(target.frames())?)
            };
            let matchings = match_embedded(q_emb.view(), t_emb.view(), penalties, chunk_len)?;
            let chunks = chunk_target(target.len(), chunk_len)?;

            for (matching, chunk) in matchings.iter().zip(chunks) {
                let params = MiningParams {
                    percentile,
                    count: config.triplets_per_batch,
                    window: config.exclusion_window,
                    mode: config.mining,
                };
                let triplets = sample_triplets(query, target, chunk, matching, chunk.view(t_emb.view()), &params, rng)?;
                if triplets.is_empty() {
                    continue;
                }
                let (a, p, n) = triplet_inputs(dataset, &triplets, config.augment_sigma, &coord_std, rng)?;
                let (loss, grad) = model.triplet_grad(a.view(), p.view(), n.view(), config.margin)?;
                let mut delta_sq = 0.0;
                for ((theta, v), g) in model.params_mut().iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                    *v = config.momentum * *v - config.learning_rate * g;
                    *theta += *v;
                    delta_sq += *v * *v;
                }
                epoch_loss += loss;
                epoch_batches += 1;
                log.batches.push(BatchLog {
                    epoch,
                    query: query.id.clone(),
                    target: target.id.clone(),
                    chunk_offset: chunk.offset,
                    triplets: triplets.len(),
                    loss,
                    percentile,
                    param_delta: delta_sq.sqrt(),
                });
            }
        }

        let moved = model
            .params()
            .iter()
            .zip(&start)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        log.epochs.push(EpochLog {
            epoch,
            percentile,
            batches: epoch_batches,
            mean_loss: if epoch_batches > 0 { epoch_loss / epoch_batches as f64 } else { 0.0 },
            param_delta: moved,
        });
        if moved <= config.epsilon {
            log.converged = true;
            break;
        }
    }
    Ok((model, log))
}

/// Gathers (augmented) raw inputs for a batch of triplets.
fn triplet_inputs(
    dataset: &Dataset,
    triplets: &[Triplet],
    sigma: f64,
    coord_std: &[f64],
    rng: &mut RngState,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let index: BTreeMap<&str, usize> = dataset.sequences().iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let f = dataset.dim();
    let mut mats = [Array2::zeros((triplets.len(), f)), Array2::zeros((triplets.len(), f)), Array2::zeros((triplets.len(), f))];
    for (row, t) in triplets.iter().enumerate() {
        for (mat, r) in mats.iter_mut().zip([&t.anchor, &t.positive, &t.negative]) {
            let seq = &dataset.sequences()[index[r.sequence.as_str()]];
            let x = seq.frame(r.frame).to_vec();
            let y = augment(&x, sigma, coord_std, rng)?;
            mat.row_mut(row).assign(&ndarray::ArrayView1::from(y.as_slice()));
        }
    }
    let [a, p, n] = mats;
    Ok((a, p, n))
}
