//! Next-frame transitions in the embedded space: a gated recurrent encoder
//! with an affine head, regression training, and closed-loop synthesis.

mod lstm;
mod synth;
mod train;

pub use lstm::{rnn_forward, rnn_loss, RecurrentPredictor, DEFAULT_CONTEXT_LEN, DEFAULT_STATE_DIM};
pub use synth::{interpolate_features, predict_next, synthesize};
pub use train::{train_predictor, PredictorConfig, PredictorLog};

pub(crate) use train::{gather, transitions};
