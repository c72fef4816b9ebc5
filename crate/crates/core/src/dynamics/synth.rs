use ndarray::{Array2, ArrayView2};

use crate::base::{l2_normalize, sq_dist, FeatureVector, FrameRef, Sequence};
use crate::embed::Embedder;
use crate::error::{check_dim, Error, Result};

use super::lstm::{rnn_forward, RecurrentPredictor};

/// Embeds the last `l` raw frames and predicts the next embedding.
pub fn predict_next<E: Embedder + ?Sized>(pred: &RecurrentPredictor, model: &E, frames: ArrayView2<'_, f64>) -> Result<FeatureVector> {
    if frames.nrows() != pred.context_len() {
        return Err(Error::config(format!(
            "expected {} context frames, got {}",
            pred.context_len(),
            frames.nrows()
        )));
    }
    let emb = model.embed_frames(frames)?;
    rnn_forward(pred, emb.view())
}

/// Rolls the predictor forward `steps` times from `seed_frames`, decoding each
/// prediction to its nearest codebook frame and feeding that frame's
/// embedding back as the next context entry.
pub fn synthesize<E: Embedder + ?Sized>(
    pred: &RecurrentPredictor,
    model: &E,
    seed_frames: ArrayView2<'_, f64>,
    steps: usize,
    codebook: &[Sequence],
) -> Result<Vec<FrameRef>> {
    if steps == 0 {
        return Err(Error::config("steps must be >= 1"));
    }
    if codebook.iter().all(|s| s.is_empty()) {
        return Err(Error::config("codebook is empty"));
    }
    if seed_frames.nrows() != pred.context_len() {
        return Err(Error::config(format!(
            "expected {} seed frames, got {}",
            pred.context_len(),
            seed_frames.nrows()
        )));
    }
    let mut refs = Vec::new();
    let mut blocks = Vec::new();
    for s in codebook {
        let e = model.embed_frames(s.frames())?;
        refs.extend((0..s.len()).map(|i| FrameRef::new(s.id.clone(), i)));
        blocks.push(e);
    }
    let views: Vec<ArrayView2<'_, f64>> = blocks.iter().map(|b| b.view()).collect();
    let book = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths");

    let mut context: Array2<f64> = model.embed_frames(seed_frames)?;
    check_dim(pred.input_dim(), context.ncols())?;
    let mut trail = Vec::with_capacity(steps);
    for _ in 0..steps {
        let y = rnn_forward(pred, context.view())?;
        let best = nearest(book.view(), y.as_slice());
        trail.push(refs[best].clone());
        let l = context.nrows();
        for r in 1..l {
            let next = context.row(r).to_owned();
            context.row_mut(r - 1).assign(&next);
        }
        context.row_mut(l - 1).assign(&book.row(best));
    }
    Ok(trail)
}

fn nearest(book: ArrayView2<'_, f64>, y: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, row) in book.rows().into_iter().enumerate() {
        let d = sq_dist(row.as_slice().expect("standard layout"), y);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// `num_steps` renormalized chord points strictly between `a` and `b`.
pub fn interpolate_features(a: &[f64], b: &[f64], num_steps: usize) -> Result<Vec<FeatureVector>> {
    check_dim(a.len(), b.len())?;
    if num_steps == 0 {
        return Err(Error::config("num_steps must be >= 1"));
    }
    (1..=num_steps)
        .map(|i| {
            let t = i as f64 / (num_steps + 1) as f64;
            let mix: Vec<f64> = a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect();
            l2_normalize(&mix)
        })
        .collect()
}
