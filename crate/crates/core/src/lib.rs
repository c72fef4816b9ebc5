//! Unsupervised activity representations from temporally constrained
//! sequence matching.
//!
//! The pipeline: [`align`] proposes frame correspondences between pairs of
//! sequences by exactly minimizing a temporally constrained matching cost;
//! [`embed`] trains a normalized encoder on triplets drawn from those
//! correspondences; [`dynamics`] learns next-frame transitions in the learned
//! space. [`synthdata`] generates activities with known ground truth and
//! [`eval`] measures how well each stage recovers it.

pub mod align;
pub mod cli;
pub mod base;
pub mod dynamics;
pub mod embed;
pub mod error;
pub mod eval;
pub mod io;
pub mod par;
pub mod rng;
pub mod synthdata;

pub use base::{l2_normalize, squared_l2, Dataset, FeatureVector, FrameRef, Sequence};
pub use error::{Error, Result};
pub use rng::RngState;
