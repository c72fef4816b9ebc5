//! Shared domain types and distance primitives.

use std::collections::HashSet;
use std::ops::Deref;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{check_dim, Error, Result};

/// Tolerance below which a vector is treated as having zero length.
pub const NORM_EPS: f64 = 1e-12;

/// A finite real feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::degenerate(format!("non-finite entry at index {i}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<ArrayView1<'_, f64>> for FeatureVector {
    fn from(v: ArrayView1<'_, f64>) -> Self {
        Self(v.to_vec())
    }
}

/// An ordered run of frames sharing one feature dimension, with optional
/// ground-truth latent pose per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: String,
    frames: Array2<f64>,
    latent: Option<Array2<f64>>,
}

impl Sequence {
    pub fn new(id: impl Into<String>, frames: Array2<f64>, latent: Option<Array2<f64>>) -> Result<Self> {
        let id = id.into();
        if frames.nrows() == 0 {
            return Err(Error::config(format!("sequence {id:?} has no frames")));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::degenerate(format!("sequence {id:?} has non-finite frames")));
        }
        if let Some(lat) = &latent {
            if lat.nrows() != frames.nrows() {
                return Err(Error::Dimension {
                    expected: frames.nrows(),
                    got: lat.nrows(),
                });
            }
            if lat.iter().any(|v| !v.is_finite()) {
                return Err(Error::degenerate(format!("sequence {id:?} has non-finite latents")));
            }
        }
        Ok(Self { id, frames, latent })
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frames(&self) -> ArrayView2<'_, f64> {
        self.frames.view()
    }

    pub fn frame(&self, i: usize) -> ArrayView1<'_, f64> {
        self.frames.row(i)
    }

    pub fn latent(&self) -> Option<ArrayView2<'_, f64>> {
        self.latent.as_ref().map(|l| l.view())
    }

    /// Contiguous sub-range of frames as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Result<Sequence> {
        if start >= end || end > self.len() {
            return Err(Error::Index(format!("frame range {start}..{end} of {}", self.len())));
        }
        let frames = self.frames.slice(ndarray::s![start..end, ..]).to_owned();
        let latent = self
            .latent
            .as_ref()
            .map(|l| l.slice(ndarray::s![start..end, ..]).to_owned());
        Sequence::new(format!("{}[{start}..{end}]", self.id), frames, latent)
    }
}

/// A collection of sequences with a common feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn new(dim: usize, sequences: Vec<Sequence>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        if sequences.len() < 2 {
            return Err(Error::config(format!(
                "a dataset needs at least 2 sequences, got {}",
                sequences.len()
            )));
        }
        let mut ids = HashSet::new();
        for s in &sequences {
            check_dim(dim, s.dim())?;
            if !ids.insert(s.id.as_str()) {
                return Err(Error::config(format!("duplicate sequence id {:?}", s.id)));
            }
        }
        let lat_dims: HashSet<Option<usize>> = sequences.iter().map(|s| s.latent.as_ref().map(|l| l.ncols())).collect();
        if lat_dims.len() > 1 {
            return Err(Error::config("sequences disagree on latent dimension"));
        }
        Ok(Self { dim, sequences })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sequence> {
        self.sequences.iter().find(|s| s.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.sequences.iter().position(|s| s.id == id)
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    /// Latent dimension, if every sequence carries ground truth.
    pub fn latent_dim(&self) -> Option<usize> {
        self.sequences.first().and_then(|s| s.latent.as_ref().map(|l| l.ncols()))
    }

    /// All frames stacked in dataset order.
    pub fn stacked_frames(&self) -> Array2<f64> {
        let views: Vec<_> = self.sequences.iter().map(|s| s.frames.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("sequences share a dimension")
    }

    /// Splits off the sequences at the given positions into a second dataset.
    pub fn split(&self, held_out: &[usize]) -> Result<(Dataset, Dataset)> {
        let (mut keep, mut out) = (Vec::new(), Vec::new());
        for (i, s) in self.sequences.iter().enumerate() {
            if held_out.contains(&i) {
                out.push(s.clone());
            } else {
                keep.push(s.clone());
            }
        }
        Ok((Dataset::new(self.dim, keep)?, Dataset::new(self.dim, out)?))
    }
}

/// Reference to one frame inside a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct FrameRef {
    pub sequence: String,
    pub frame: usize,
}

impl FrameRef {
    pub fn new(sequence: impl Into<String>, frame: usize) -> Self {
        Self {
            sequence: sequence.into(),
            frame,
        }
    }
}

/// `Σ (a_i − b_i)²`.
pub fn squared_l2(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    Ok(sq_dist(a, b))
}

/// Returns `a / ‖a‖`.
pub fn l2_normalize(a: &[f64]) -> Result<FeatureVector> {
    let n = norm(a);
    if !(n > NORM_EPS) {
        return Err(Error::degenerate("cannot normalize a zero-length vector"));
    }
    Ok(FeatureVector(a.iter().map(|v| v / n).collect()))
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Row-wise squared distances between two row sets, as an `n × m` matrix.
#[cfg(test)]
pub(crate) fn pairwise_sq_dists(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        a.row(i).iter().zip(b.row(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    })
}

/// Nearest-rank percentile of `values` (`p` in `[0, 100]`); `values` need
/// not be sorted. Empty input yields `None`.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn squared_l2_cases() {
        assert_eq!(squared_l2(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(squared_l2(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!(matches!(
            squared_l2(&[1.0], &[1.0, 2.0]),
            Err(Error::Dimension { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn squared_l2_matches_loop() {
        let mut rng = RngState::new(11);
        let a: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let mut expected = 0.0;
        for i in 0..5 {
            let d = a[i] - b[i];
            expected += d * d;
        }
        assert!((squared_l2(&a, &b).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn normalize_cases() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        let e = l2_normalize(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(e.as_slice(), &[0.0, 1.0, 0.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn normalize_random_has_unit_norm() {
        let mut rng = RngState::new(5);
        for _ in 0..100 {
            let a: Vec<f64> = (0..17).map(|_| rng.normal() * 10.0).collect();
            assert!((l2_normalize(&a).unwrap().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(FeatureVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(FeatureVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn dataset_validation() {
        let s = |id: &str| Sequence::new(id, array![[1.0, 2.0]], None).unwrap();
        assert!(Dataset::new(2, vec![s("a")]).is_err());
        assert!(Dataset::new(2, vec![s("a"), s("a")]).is_err());
        assert!(Dataset::new(3, vec![s("a"), s("b")]).is_err());
        assert!(Dataset::new(2, vec![s("a"), s("b")]).is_ok());
        assert!(Sequence::new("x", array![[1.0], [2.0]], Some(array![[0.0]])).is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let d = [0.9, 0.1, 1.6, 0.4];
        assert_eq!(nearest_rank_percentile(&d, 50.0), Some(0.4));
        assert_eq!(nearest_rank_percentile(&d, 100.0), Some(1.6));
        assert_eq!(nearest_rank_percentile(&d, 0.0), Some(0.1));
        assert_eq!(nearest_rank_percentile(&[], 50.0), None);
    }

    proptest! {
        #[test]
        fn squared_l2_symmetric(a in proptest::collection::vec(-1e3f64..1e3, 1..16), seed in 0u64..1000) {
            let mut rng = RngState::new(seed);
            let b: Vec<f64> = a.iter().map(|_| rng.normal() * 100.0).collect();
            let ab = squared_l2(&a, &b).unwrap();
            let ba = squared_l2(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
        }

        #[test]
        fn normalize_idempotent(a in proptest::collection::vec(-1e3f64..1e3, 1..16)) {
            prop_assume!(norm(&a) > 1e-6);
            let once = l2_normalize(&a).unwrap();
            let twice = l2_normalize(&once).unwrap();
            for (x, y) in once.iter().zip(twice.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
