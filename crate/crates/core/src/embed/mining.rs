//! Triplet sampling from matchings, sequence neighbourhoods and input jitter.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::align::{Chunk, Matching};
use crate::base::{nearest_rank_percentile, sq_dist, Dataset, FeatureVector, FrameRef, Sequence};
use crate::error::{check_dim, Error, Result};
use crate::rng::RngState;

use super::Embedder;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: FrameRef,
    pub positive: FrameRef,
    pub negative: FrameRef,
}

/// Which side of the percentile threshold negatives come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMining {
    /// Frames at or below the p-th percentile of distance to the positive;
    /// lowering p leaves only frames close to the positive.
    #[default]
    Closest,
    /// Frames at or above the (100 − p)-th percentile of distance; lowering
    /// p leaves only the least similar frames.
    Farthest,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiningParams {
    pub percentile: f64,
    pub count: usize,
    /// Temporal neighbours of the positive (±window) never serve as negatives.
    pub window: usize,
    pub mode: NegativeMining,
}

/// Chunk-local indices eligible as negatives for chunk-local `positive`,
/// given distances in the current similarity space.
pub fn eligible_negatives(chunk_emb: ArrayView2<'_, f64>, positive: usize, params: &MiningParams) -> Vec<usize> {
    let pos = chunk_emb.row(positive).to_vec();
    let dists: Vec<(usize, f64)> = chunk_emb
        .rows()
        .into_iter()
        .enumerate()
        .filter(|&(k, _)| k != positive)
        .map(|(k, r)| (k, sq_dist(&pos, &r.to_vec()).sqrt()))
        .collect();
    let values: Vec<f64> = dists.iter().map(|d| d.1).collect();
    let keep: Box<dyn Fn(f64) -> bool> = match params.mode {
        NegativeMining::Closest => match nearest_rank_percentile(&values, params.percentile) {
            Some(t) => Box::new(move |d| d <= t),
            None => return Vec::new(),
        },
        NegativeMining::Farthest => match nearest_rank_percentile(&values, 100.0 - params.percentile) {
            Some(t) => Box::new(move |d| d >= t),
            None => return Vec::new(),
        },
    };
    dists
        .into_iter()
        .filter(|&(k, d)| k.abs_diff(positive) > params.window && keep(d))
        .map(|(k, _)| k)
        .collect()
}

/// Draws up to `params.count` triplets from one chunk matching.
///
/// Anchors are uniform over matched query frames, the positive is the
/// matched chunk frame and the negative is uniform over
/// [`eligible_negatives`]. `chunk_emb` holds the chunk's frames in the space
/// used for the percentile test. Returns fewer triplets (possibly none) when
/// nothing is matched or no negative qualifies.
pub fn sample_triplets(
    query: &Sequence,
    target: &Sequence,
    chunk: Chunk,
    matching: &Matching,
    chunk_emb: ArrayView2<'_, f64>,
    params: &MiningParams,
    rng: &mut RngState,
) -> Result<Vec<Triplet>> {
    if query.id == target.id {
        return Err(Error::config("anchor and positive must come from different sequences"));
    }
    check_dim(query.len(), matching.pi.len())?;
    check_dim(chunk.len, chunk_emb.nrows())?;
    if matching.target_offset != chunk.offset || chunk.end() > target.len() {
        return Err(Error::config("matching does not belong to this chunk"));
    }
    if !(0.0..=100.0).contains(&params.percentile) {
        return Err(Error::config(format!("percentile must lie in [0, 100], got {}", params.percentile)));
    }
    let anchors: Vec<usize> = (0..matching.pi.len()).filter(|&j| matching.pi[j] != 0).collect();
    if anchors.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(&k) = matching.pi.iter().find(|&&k| k > chunk.len) {
        return Err(Error::Index(format!("pi entry {k} exceeds chunk length {}", chunk.len)));
    }
    let mut pools: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut out = Vec::with_capacity(params.count);
    for _ in 0..params.count {
        let j = anchors[rng.index(anchors.len())];
        let pos = matching.pi[j] - 1;
        let pool = pools.entry(pos).or_insert_with(|| eligible_negatives(chunk_emb, pos, params));
        if pool.is_empty() {
            continue;
        }
        let neg = pool[rng.index(pool.len())];
        out.push(Triplet {
            anchor: FrameRef::new(&query.id, j),
            positive: FrameRef::new(&target.id, chunk.offset + pos),
            negative: FrameRef::new(&target.id, chunk.offset + neg),
        });
    }
    Ok(out)
}

/// For each sequence, the `k` sequences whose mean embedded frame is
/// closest; ties resolve by id.
pub fn sequence_neighbors<E: Embedder + ?Sized>(dataset: &Dataset, model: &E, k: usize) -> Result<BTreeMap<String, Vec<String>>> {
    if k >= dataset.len() {
        return Err(Error::config(format!(
            "neighbourhood size {k} must be smaller than the number of sequences {}",
            dataset.len()
        )));
    }
    let descriptors: Vec<Array1<f64>> = dataset
        .sequences()
        .iter()
        .map(|s| Ok(model.embed_frames(s.frames())?.mean_axis(Axis(0)).expect("non-empty")))
        .collect::<Result<_>>()?;
    Ok(neighbors_from_descriptors(dataset, &descriptors, k))
}

pub(crate) fn neighbors_from_descriptors(dataset: &Dataset, descriptors: &[Array1<f64>], k: usize) -> BTreeMap<String, Vec<String>> {
    let seqs = dataset.sequences();
    let mut out = BTreeMap::new();
    for (i, s) in seqs.iter().enumerate() {
        let di = descriptors[i].as_slice().unwrap();
        let mut others: Vec<(f64, &str)> = seqs
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, o)| (sq_dist(di, descriptors[j].as_slice().unwrap()), o.id.as_str()))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        out.insert(s.id.clone(), others.into_iter().take(k).map(|(_, id)| id.to_string()).collect());
    }
    out
}

/// Adds `N(0, (sigma · coord_std_i)²)` noise to every coordinate.
pub fn augment(x: &[f64], sigma: f64, coord_std: &[f64], rng: &mut RngState) -> Result<FeatureVector> {
    check_dim(x.len(), coord_std.len())?;
    if !(sigma >= 0.0) {
        return Err(Error::config(format!("augmentation sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return FeatureVector::new(x.to_vec());
    }
    FeatureVector::new(x.iter().zip(coord_std).map(|(v, s)| v + sigma * s * rng.normal()).collect())
}

/// Per-coordinate standard deviation over every frame in the dataset.
pub fn coordinate_std(dataset: &Dataset) -> Vec<f64> {
    dataset.stacked_frames().std_axis(Axis(0), 0.0).to_vec()
}
