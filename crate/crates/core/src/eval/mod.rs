//! Evaluation against synthetic ground truth: posture retrieval, pose
//! transfer, next-frame prediction, alignment accuracy, and the structure
//! of the embedded activity manifold.

mod alignment;
mod manifold;
mod prediction;
mod report;
mod retrieval;

use ndarray::{Array2, ArrayView2};

use crate::base::Dataset;
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::par;

pub use alignment::{alignment_accuracy, assignment_as_matching};
pub use manifold::{
    agglomerative_representatives, loop_closure_ratio, pca_project_2d, pca_project_rows, representatives_of_rows, single_cycle_segments,
    Projection, LOOP_CLOSURE_RATIO,
};
pub use prediction::{knn_prediction_curve, midpoint_check, trail_advance_fraction, MidpointCheck, PredictionCurve};
pub use report::{curve_text, EvalReport};
pub use retrieval::{
    default_pose_epsilon, retrieval_auc, retrieval_auc_oracle, zero_shot_pose_error, RetrievalParams, RetrievalResult, ZeroShotResult,
    DEFAULT_EPSILON_PERCENTILE, DEFAULT_QUERIES, DEFAULT_TAUS,
};

pub(crate) fn embed_all<E: Embedder + ?Sized>(dataset: &Dataset, model: &E) -> Result<Vec<Array2<f64>>> {
    par::try_map(dataset.sequences(), |s| model.embed_frames(s.frames()))
}

pub(crate) fn latents(dataset: &Dataset) -> Result<Vec<ArrayView2<'_, f64>>> {
    dataset
        .sequences()
        .iter()
        .map(|s| s.latent().ok_or_else(|| Error::config(format!("sequence {:?} has no latent ground truth", s.id))))
        .collect()
}
