//! Non-learned feature maps: whitened raw features (used to bootstrap the
//! first training epoch and as a retrieval baseline), the identity, and a
//! pose-agnostic random map for chance-level reference.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use sha2::{Digest, Sha256};

use crate::base::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::rng::RngState;

use super::Embedder;

/// Eigenvalue floor, relative to the mean eigenvalue.
pub const WHITEN_SHRINKAGE: f64 = 1e-3;

/// ZCA whitening `x ↦ (x − μ) U (Λ + εI)^{-1/2} Uᵀ` fitted on a dataset.
#[derive(Clone, Debug)]
pub struct Whitener {
    mean: Array1<f64>,
    transform: Array2<f64>,
}

impl Whitener {
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        Self::fit_frames(dataset.stacked_frames().view())
    }

    pub fn fit_frames(frames: ArrayView2<'_, f64>) -> Result<Self> {
        let n = frames.nrows();
        if n < 2 {
            return Err(Error::degenerate("whitening needs at least two frames"));
        }
        let f = frames.ncols();
        let mean = frames.mean_axis(Axis(0)).expect("non-empty");
        let centered = &frames - &mean;
        let cov = centered.t().dot(&centered) / (n - 1) as f64;
        let eig = SymmetricEigen::new(DMatrix::from_fn(f, f, |i, j| cov[[i, j]]));
        let mean_eig = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum::<f64>() / f as f64;
        if !(mean_eig > 0.0) {
            return Err(Error::degenerate("frames have zero variance"));
        }
        let floor = WHITEN_SHRINKAGE * mean_eig;
        let scale: Vec<f64> = eig.eigenvalues.iter().map(|&l| 1.0 / (l.max(0.0) + floor).sqrt()).collect();
        let u = &eig.eigenvectors;
        let transform = Array2::from_shape_fn((f, f), |(i, j)| (0..f).map(|k| u[(i, k)] * scale[k] * u[(j, k)]).sum());
        Ok(Self { mean, transform })
    }
}

impl Embedder for Whitener {
    fn input_dim(&self) -> usize {
        self.mean.len()
    }

    fn embed_frames(&self, frames: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim(self.mean.len(), frames.ncols())?;
        Ok((&frames - &self.mean).dot(&self.transform))
    }
}

/// Raw features, unchanged.
#[derive(Clone, Copy, Debug)]
pub struct Identity {
    pub dim: usize,
}

impl Embedder for Identity {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn embed_frames(&self, frames: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim(self.dim, frames.ncols())?;
        Ok(frames.to_owned())
    }
}

/// Maps every distinct input to an independent random unit vector, keyed by
/// a hash of its bits. Carries no information about pose.
#[derive(Clone, Copy, Debug)]
pub struct RandomEmbedding {
    pub input: usize,
    pub output: usize,
    pub seed: u64,
}

impl Embedder for RandomEmbedding {
    fn input_dim(&self) -> usize {
        self.input
    }

    fn embed_frames(&self, frames: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim(self.input, frames.ncols())?;
        let mut out = Array2::zeros((frames.nrows(), self.output));
        for (row, mut dst) in frames.rows().into_iter().zip(out.rows_mut()) {
            let mut h = Sha256::new();
            h.update(self.seed.to_le_bytes());
            for v in row {
                h.update(v.to_bits().to_le_bytes());
            }
            let digest = h.finalize();
            let key = u64::from_le_bytes(digest[..8].try_into().unwrap());
            let mut rng = RngState::new(key);
            dst.mapv_inplace(|_| rng.normal());
            let n = dst.dot(&dst).sqrt();
            dst /= n;
        }
        Ok(out)
    }
}
