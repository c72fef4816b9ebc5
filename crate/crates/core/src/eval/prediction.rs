use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::base::{sq_dist, Dataset, FrameRef};
use crate::dynamics::{gather, interpolate_features, transitions, RecurrentPredictor};
use crate::embed::Embedder;
use crate::error::{check_dim, Error, Result};
use crate::par;

use super::{embed_all, latents};

const PREDICT_BLOCK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionCurve {
    pub transitions: usize,
    pub prediction_mean: f64,
    pub prediction_std: f64,
    /// Index `k − 1` holds the statistics of the k-th nearest neighbour.
    pub knn_mean: Vec<f64>,
    pub knn_std: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Compares next-frame prediction error with the distance of the true next
/// frame to its k-th nearest neighbour among all other frames (excluding
/// frames within `window` steps of it in its own sequence), k = 1..=k_max.
pub fn knn_prediction_curve<E: Embedder + ?Sized>(
    dataset: &Dataset,
    model: &E,
    pred: &RecurrentPredictor,
    k_max: usize,
    window: usize,
) -> Result<PredictionCurve> {
    if k_max == 0 {
        return Err(Error::config("k_max must be >= 1"));
    }
    let pool = dataset.total_frames().saturating_sub(2 * window + 1);
    if k_max > pool {
        return Err(Error::config(format!("k_max {k_max} exceeds the {pool} frames available as neighbours")));
    }
    let emb = embed_all(dataset, model)?;
    check_dim(pred.input_dim(), emb[0].ncols())?;
    let l = pred.context_len();
    let lengths: Vec<usize> = dataset.sequences().iter().map(|s| s.len()).collect();
    let all: Vec<_> = transitions(&lengths, l).into_iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::config(format!("no sequence is longer than the context length {l}")));
    }

    let blocks = par::blocks(all.len(), PREDICT_BLOCK);
    let errs: Vec<Vec<f64>> = par::try_map(&blocks, |&(lo, hi)| {
        let (steps, targets) = gather(&emb, &all[lo..hi], l);
        let views: Vec<_> = steps.iter().map(|m| m.view()).collect();
        let out = pred.forward_batch(&views)?.output;
        Ok::<_, Error>(
            out.rows()
                .into_iter()
                .zip(targets.rows())
                .map(|(y, t)| sq_dist(&y.to_vec(), &t.to_vec()).sqrt())
                .collect(),
        )
    })?;
    let errs: Vec<f64> = errs.into_iter().flatten().collect();

    let knn: Vec<Vec<f64>> = par::map(&all, |tr| {
        let (s, t) = (tr.seq, tr.end + 1);
        let target = emb[s].row(t).to_vec();
        let mut d: Vec<f64> = Vec::with_capacity(pool + 2 * window + 1);
        for (o, e) in emb.iter().enumerate() {
            for k in 0..e.nrows() {
                if o == s && k.abs_diff(t) <= window {
                    continue;
                }
                d.push(sq_dist(&target, e.row(k).as_slice().expect("standard layout")).sqrt());
            }
        }
        d.select_nth_unstable_by(k_max - 1, f64::total_cmp);
        let mut head = d[..k_max].to_vec();
        head.sort_by(f64::total_cmp);
        head
    });

    let (prediction_mean, prediction_std) = mean_std(&errs);
    let mut knn_mean = Vec::with_capacity(k_max);
    let mut knn_std = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let col: Vec<f64> = knn.iter().map(|row| row[k]).collect();
        let (m, s) = mean_std(&col);
        knn_mean.push(m);
        knn_std.push(s);
    }
    Ok(PredictionCurve {
        transitions: all.len(),
        prediction_mean,
        prediction_std,
        knn_mean,
        knn_std,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MidpointCheck {
    pub triples: usize,
    /// Fraction of triples where the interpolated midpoint is closer to the
    /// middle frame's embedding than either endpoint.
    pub win_rate: f64,
}

/// Over every frame triple `(t, t+1, t+2)`, interpolates the embeddings of
/// the outer frames and scores the midpoint against the held-out middle.
pub fn midpoint_check<E: Embedder + ?Sized>(dataset: &Dataset, model: &E) -> Result<MidpointCheck> {
    let emb = embed_all(dataset, model)?;
    let mut wins = 0;
    let mut triples = 0;
    for e in &emb {
        for t in 0..e.nrows().saturating_sub(2) {
            let (a, m, b) = (e.row(t).to_vec(), e.row(t + 1).to_vec(), e.row(t + 2).to_vec());
            let mid = match interpolate_features(&a, &b, 1) {
                Ok(v) => v.into_iter().next().expect("one step"),
                Err(Error::DegenerateInput(_)) => continue,
                Err(e) => return Err(e),
            };
            let d_mid = sq_dist(&mid, &m);
            triples += 1;
            if d_mid < sq_dist(&a, &m) && d_mid < sq_dist(&b, &m) {
                wins += 1;
            }
        }
    }
    if triples == 0 {
        return Err(Error::degenerate("no frame triples to evaluate"));
    }
    Ok(MidpointCheck {
        triples,
        win_rate: wins as f64 / triples as f64,
    })
}

/// Fraction of consecutive trail steps whose latent phase advances in the
/// direction of the activity cycle by less than half a turn.
pub fn trail_advance_fraction(dataset: &Dataset, trail: &[FrameRef]) -> Result<f64> {
    let lat = latents(dataset)?;
    if trail.len() < 2 {
        return Err(Error::config("trail needs at least two frames"));
    }
    let phase = |r: &FrameRef| -> Result<f64> {
        let s = dataset.index_of(&r.sequence).ok_or_else(|| Error::Index(format!("unknown sequence {:?}", r.sequence)))?;
        let z = lat[s].row(r.frame);
        Ok(z[1].atan2(z[0]))
    };
    let phases: Vec<f64> = trail.iter().map(phase).collect::<Result<_>>()?;
    let advancing = phases
        .windows(2)
        .filter(|w| {
            let d = (w[1] - w[0]).rem_euclid(2.0 * PI);
            d > 0.0 && d < PI
        })
        .count();
    Ok(advancing as f64 / (phases.len() - 1) as f64)
}
