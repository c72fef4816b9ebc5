use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::base::{nearest_rank_percentile, sq_dist, Dataset, FrameRef};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::RngState;

use super::{embed_all, latents};

/// Percentile of pairwise latent distances used as the default match radius.
pub const DEFAULT_EPSILON_PERCENTILE: f64 = 5.0;
pub const DEFAULT_QUERIES: usize = 500;
pub const DEFAULT_TAUS: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.5, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalParams {
    /// Latent radius defining a true match; `None` uses the default
    /// percentile of the dataset's pairwise latent distances.
    pub pose_epsilon: Option<f64>,
    pub queries: usize,
    pub seed: u64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            pose_epsilon: None,
            queries: DEFAULT_QUERIES,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub auc: f64,
    pub pose_epsilon: f64,
    pub queries: Vec<FrameRef>,
    pub per_query: Vec<f64>,
}

/// The default match radius: a low percentile of all pairwise latent
/// distances.
pub fn default_pose_epsilon(dataset: &Dataset) -> Result<f64> {
    let lat = latents(dataset)?;
    let rows: Vec<Vec<f64>> = lat.iter().flat_map(|z| z.rows().into_iter().map(|r| r.to_vec())).collect();
    let mut all = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            all.push(sq_dist(&rows[i], &rows[j]).sqrt());
        }
    }
    nearest_rank_percentile(&all, DEFAULT_EPSILON_PERCENTILE).ok_or_else(|| Error::degenerate("need at least two frames"))
}

/// Mean per-query ROC AUC of ranking other-sequence frames by embedding
/// distance, where a candidate is relevant iff its latent pose lies within
/// `pose_epsilon` of the query's.
pub fn retrieval_auc<E: Embedder + ?Sized>(dataset: &Dataset, model: &E, params: &RetrievalParams) -> Result<RetrievalResult> {
    let lat = latents(dataset)?;
    let emb = embed_all(dataset, model)?;
    retrieval_from(dataset, &emb, &lat, params)
}

/// The same protocol ranking by latent distance itself: the best any
/// embedding can do.
pub fn retrieval_auc_oracle(dataset: &Dataset, params: &RetrievalParams) -> Result<RetrievalResult> {
    let lat = latents(dataset)?;
    let owned: Vec<Array2<f64>> = lat.iter().map(|z| z.to_owned()).collect();
    retrieval_from(dataset, &owned, &lat, params)
}

fn retrieval_from(dataset: &Dataset, emb: &[Array2<f64>], lat: &[ArrayView2<'_, f64>], params: &RetrievalParams) -> Result<RetrievalResult> {
    if params.queries == 0 {
        return Err(Error::config("queries must be >= 1"));
    }
    let eps = match params.pose_epsilon {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(_) => return Err(Error::config("pose_epsilon must be finite and > 0")),
        None => default_pose_epsilon(dataset)?,
    };
    let mut all: Vec<(usize, usize)> = Vec::with_capacity(dataset.total_frames());
    for (s, seq) in dataset.sequences().iter().enumerate() {
        all.extend((0..seq.len()).map(|t| (s, t)));
    }
    let take = params.queries.min(all.len());
    let mut rng = RngState::new(params.seed);
    for i in 0..take {
        let j = i + rng.index(all.len() - i);
        all.swap(i, j);
    }
    let picked = &all[..take];

    let scored = par::map(picked, |&(s, t)| {
        let qe = emb[s].row(t);
        let qz = lat[s].row(t);
        let (qe, qz) = (qe.as_slice().expect("standard layout"), qz.to_vec());
        let mut cands: Vec<(f64, bool)> = Vec::new();
        for (o, (e, z)) in emb.iter().zip(lat).enumerate() {
            if o == s {
                continue;
            }
            for k in 0..e.nrows() {
                let d = sq_dist(qe, e.row(k).as_slice().expect("standard layout"));
                let rel = sq_dist(&qz, &z.row(k).to_vec()).sqrt() <= eps;
                cands.push((d, rel));
            }
        }
        roc_auc(&mut cands)
    });

    let mut queries = Vec::new();
    let mut per_query = Vec::new();
    for (&(s, t), a) in picked.iter().zip(scored) {
        if let Some(a) = a {
            queries.push(FrameRef::new(dataset.sequences()[s].id.clone(), t));
            per_query.push(a);
        }
    }
    if per_query.is_empty() {
        return Err(Error::degenerate("no query has both relevant and irrelevant candidates"));
    }
    let auc = per_query.iter().sum::<f64>() / per_query.len() as f64;
    Ok(RetrievalResult {
        auc,
        pose_epsilon: eps,
        queries,
        per_query,
    })
}

/// AUC of ranking by ascending distance; ties count one half. `None` when
/// either class is empty.
pub(crate) fn roc_auc(cands: &mut [(f64, bool)]) -> Option<f64> {
    let pos = cands.iter().filter(|c| c.1).count();
    let neg = cands.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut neg_after = neg as f64;
    let mut wins = 0.0;
    let mut i = 0;
    while i < cands.len() {
        let mut j = i;
        while j < cands.len() && cands[j].0 == cands[i].0 {
            j += 1;
        }
        let p = cands[i..j].iter().filter(|c| c.1).count() as f64;
        let n = (j - i) as f64 - p;
        neg_after -= n;
        wins += p * neg_after + 0.5 * p * n;
        i = j;
    }
    Some(wins / (pos as f64 * neg as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotResult {
    pub mean_error: f64,
    /// `(τ, fraction of test frames with latent error ≤ τ)`.
    pub accuracy: Vec<(f64, f64)>,
    /// The same protocol with the nearest train frame chosen by latent
    /// distance.
    pub oracle_mean_error: f64,
    pub oracle_accuracy: Vec<(f64, f64)>,
    pub per_frame: Vec<f64>,
}

/// Each test frame adopts the latent pose of its embedding-nearest train
/// frame.
pub fn zero_shot_pose_error<E: Embedder + ?Sized>(train: &Dataset, test: &Dataset, model: &E, taus: &[f64]) -> Result<ZeroShotResult> {
    let (ltr, lte) = (latents(train)?, latents(test)?);
    if ltr[0].ncols() != lte[0].ncols() {
        return Err(Error::config("train and test latent spaces differ"));
    }
    let stack = |blocks: &[ArrayView2<'_, f64>]| ndarray::concatenate(ndarray::Axis(0), blocks).expect("equal widths");
    let etr: Vec<Array2<f64>> = embed_all(train, model)?;
    let ete: Vec<Array2<f64>> = embed_all(test, model)?;
    let etr = stack(&etr.iter().map(|a| a.view()).collect::<Vec<_>>());
    let ete = stack(&ete.iter().map(|a| a.view()).collect::<Vec<_>>());
    let ztr = stack(&ltr);
    let zte = stack(&lte);

    let transfer = |space_tr: ArrayView2<'_, f64>, space_te: ArrayView2<'_, f64>| -> Vec<f64> {
        par::map_range(space_te.nrows(), |i| {
            let q = space_te.row(i).to_vec();
            let mut best = (0, f64::INFINITY);
            for (k, r) in space_tr.rows().into_iter().enumerate() {
                let d = sq_dist(&q, r.as_slice().expect("standard layout"));
                if d < best.1 {
                    best = (k, d);
                }
            }
            sq_dist(&zte.row(i).to_vec(), &ztr.row(best.0).to_vec()).sqrt()
        })
    };
    let per_frame = transfer(etr.view(), ete.view());
    let oracle = transfer(ztr.view(), zte.view());
    let curve = |errs: &[f64]| -> Vec<(f64, f64)> {
        taus.iter()
            .map(|&t| (t, errs.iter().filter(|&&e| e <= t).count() as f64 / errs.len() as f64))
            .collect()
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ZeroShotResult {
        mean_error: mean(&per_frame),
        accuracy: curve(&per_frame),
        oracle_mean_error: mean(&oracle),
        oracle_accuracy: curve(&oracle),
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Identity, RandomEmbedding};
    use crate::synthdata::{generate_dataset, GeneratorConfig};

    fn small() -> Dataset {
        generate_dataset(&GeneratorConfig {
            num_sequences: 4,
            min_frames: 60,
            max_frames: 70,
            feature_dim: 16,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn auc_hand_cases() {
        let mut perfect = vec![(0.1, true), (0.2, true), (0.3, false)];
        assert_eq!(roc_auc(&mut perfect), Some(1.0));
        let mut inverted = vec![(0.1, false), (0.2, true)];
        assert_eq!(roc_auc(&mut inverted), Some(0.0));
        let mut tied = vec![(0.5, false), (0.5, true)];
        assert_eq!(roc_auc(&mut tied), Some(0.5));
        let mut one_class = vec![(0.5, true)];
        assert_eq!(roc_auc(&mut one_class), None);
    }

    #[test]
    fn auc_matches_pairwise_count() {
        let mut rng = RngState::new(5);
        let mut c: Vec<(f64, bool)> = (0..60).map(|_| ((rng.index(10)) as f64, rng.uniform() < 0.3)).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for a in c.iter().filter(|x| x.1) {
            for b in c.iter().filter(|x| !x.1) {
                den += 1.0;
                num += if a.0 < b.0 { 1.0 } else if a.0 == b.0 { 0.5 } else { 0.0 };
            }
        }
        assert!((roc_auc(&mut c).unwrap() - num / den).abs() < 1e-12);
    }

    #[test]
    fn oracle_dominates_and_random_is_chance() {
        let d = small();
        let p = RetrievalParams::default();
        let oracle = retrieval_auc_oracle(&d, &p).unwrap();
        let raw = retrieval_auc(&d, &Identity { dim: 16 }, &p).unwrap();
        assert!(oracle.auc >= raw.auc);
        assert!((oracle.auc - 1.0).abs() < 1e-12);
        let rnd = retrieval_auc(&d, &RandomEmbedding { input: 16, output: 32, seed: 1 }, &p).unwrap();
        assert!((rnd.auc - 0.5).abs() < 0.05, "{}", rnd.auc);
        assert!((0.0..=1.0).contains(&raw.auc));
    }

    #[test]
    fn missing_latents_rejected() {
        let d = small();
        let stripped: Vec<_> = d
            .sequences()
            .iter()
            .map(|s| crate::base::Sequence::new(s.id.clone(), s.frames().to_owned(), None).unwrap())
            .collect();
        let d = Dataset::new(16, stripped).unwrap();
        let e = retrieval_auc(&d, &Identity { dim: 16 }, &RetrievalParams::default()).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn zero_shot_self_and_oracle() {
        let d = small();
        let id = Identity { dim: 16 };
        let r = zero_shot_pose_error(&d, &d, &id, &DEFAULT_TAUS).unwrap();
        assert_eq!(r.mean_error, 0.0);
        let (tr, te) = d.split(&[0, 1]).unwrap();
        let r = zero_shot_pose_error(&tr, &te, &id, &DEFAULT_TAUS).unwrap();
        assert!(r.mean_error >= r.oracle_mean_error);
        assert!(r.accuracy.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}
