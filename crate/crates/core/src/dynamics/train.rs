use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::base::Dataset;
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::RngState;

use super::lstm::{RecurrentPredictor, DEFAULT_CONTEXT_LEN, DEFAULT_STATE_DIM};

/// Rows per gradient shard; fixed so results do not depend on worker count.
const SHARD_ROWS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub context_len: usize,
    pub state_dim: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Rescale any batch gradient longer than this (l2); 0 disables.
    pub clip_norm: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            context_len: DEFAULT_CONTEXT_LEN,
            state_dim: DEFAULT_STATE_DIM,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            clip_norm: 5.0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_len == 0 || self.batch_size == 0 || self.epochs == 0 || self.state_dim == 0 {
            return Err(Error::config("context_len, state_dim, epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.clip_norm >= 0.0) {
            return Err(Error::config("need learning_rate > 0, momentum in [0, 1), clip_norm >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictorLog {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub samples: usize,
    pub warnings: Vec<String>,
}

/// One training transition: context ends at `end`, target is `end + 1`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Transition {
    pub seq: usize,
    pub end: usize,
}

/// All transitions with a full context inside one sequence.
pub(crate) fn transitions(lengths: &[usize], context_len: usize) -> Vec<Vec<Transition>> {
    lengths
        .iter()
        .enumerate()
        .map(|(seq, &n)| {
            if n <= context_len {
                Vec::new()
            } else {
                (context_len - 1..n - 1).map(|end| Transition { seq, end }).collect()
            }
        })
        .collect()
}

/// Gathers per-step context blocks and targets for a set of transitions.
pub(crate) fn gather(embedded: &[Array2<f64>], batch: &[Transition], context_len: usize) -> (Vec<Array2<f64>>, Array2<f64>) {
    let d = embedded[0].ncols();
    let mut steps = vec![Array2::zeros((batch.len(), d)); context_len];
    let mut targets = Array2::zeros((batch.len(), d));
    for (r, tr) in batch.iter().enumerate() {
        let e = &embedded[tr.seq];
        let start = tr.end + 1 - context_len;
        for (k, step) in steps.iter_mut().enumerate() {
            step.row_mut(r).assign(&e.row(start + k));
        }
        targets.row_mut(r).assign(&e.row(tr.end + 1));
    }
    (steps, targets)
}

/// Sharded mean loss and gradient over a batch.
pub(crate) fn batch_grad(pred: &RecurrentPredictor, steps: &[Array2<f64>], targets: ArrayView2<'_, f64>) -> Result<(f64, Vec<f64>)> {
    let b = targets.nrows();
    let shards = par::blocks(b, SHARD_ROWS);
    let parts = par::try_map(&shards, |&(lo, hi)| {
        let views: Vec<ArrayView2<'_, f64>> = steps.iter().map(|m| m.slice(s![lo..hi, ..])).collect();
        pred.loss_and_grad(&views, targets.slice(s![lo..hi, ..]))
            .map(|(l, g)| (l * (hi - lo) as f64, g, (hi - lo) as f64))
    })?;
    let mut grad = vec![0.0; pred.params().len()];
    let mut loss = 0.0;
    for (l, g, rows) in parts {
        loss += l;
        let w = rows / b as f64;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += w * v;
        }
    }
    Ok((loss / b as f64, grad))
}

/// Trains a next-frame regressor on embedded contexts of a frozen model.
///
/// Every epoch draws the same number of transitions from each sequence and
/// interleaves them, so long sequences do not dominate a mini-batch.
pub fn train_predictor<E: Embedder + ?Sized>(
    dataset: &Dataset,
    model: &E,
    config: &PredictorConfig,
    rng: &mut RngState,
) -> Result<(RecurrentPredictor, PredictorLog)> {
    config.validate()?;
    let l = config.context_len;
    let mut log = PredictorLog::default();
    let embedded: Vec<Array2<f64>> = par::try_map(dataset.sequences(), |s| model.embed_frames(s.frames()))?;
    let d = embedded[0].ncols();
    let lengths: Vec<usize> = dataset.sequences().iter().map(|s| s.len()).collect();
    let mut per_seq = transitions(&lengths, l);
    for (s, tr) in dataset.sequences().iter().zip(&per_seq) {
        if tr.is_empty() {
            log.warnings.push(format!("sequence {:?} has {} frames, needs more than {l}; skipped", s.id, s.len()));
        }
    }
    per_seq.retain(|t| !t.is_empty());
    if per_seq.is_empty() {
        return Err(Error::config(format!("no sequence is longer than the context length {l}")));
    }
    let total: usize = per_seq.iter().map(Vec::len).sum();
    let quota = total.div_ceil(per_seq.len());
    log.samples = quota * per_seq.len();

    let mut pred = RecurrentPredictor::random(d, config.state_dim, l, &mut rng.fork(0))?;
    let mut velocity = vec![0.0; pred.params().len()];

    for _ in 0..config.epochs {
        let mut order = Vec::with_capacity(log.samples);
        let draws: Vec<Vec<Transition>> = per_seq
            .iter()
            .map(|list| {
                let mut idx: Vec<usize> = (0..list.len()).collect();
                shuffle(&mut idx, rng);
                (0..quota).map(|k| list[idx[k % idx.len()]]).collect()
            })
            .collect();
        for k in 0..quota {
            order.extend(draws.iter().map(|dr| dr[k]));
        }

        let mut epoch_loss = 0.0;
        let batches = par::blocks(order.len(), config.batch_size);
        for &(lo, hi) in &batches {
            let (steps, targets) = gather(&embedded, &order[lo..hi], l);
            let (loss, mut grad) = batch_grad(&pred, &steps, targets.view())?;
            if config.clip_norm > 0.0 {
                let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if n > config.clip_norm {
                    let k = config.clip_norm / n;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
            }
            for ((theta, v), g) in pred.params_mut().iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = config.momentum * *v - config.learning_rate * g;
                *theta += *v;
            }
            epoch_loss += loss;
        }
        log.epoch_loss.push(epoch_loss / batches.len() as f64);
    }
    Ok((pred, log))
}

fn shuffle(v: &mut [usize], rng: &mut RngState) {
    for i in (1..v.len()).rev() {
        let j = rng.index(i + 1);
        v.swap(i, j);
    }
}
