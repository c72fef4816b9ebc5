//! On-disk formats: SeqPack datasets, model containers and run configs.

mod config;
mod container;
mod seqpack;

pub use config::{EvalConfig, PenaltyConfig, PenaltyMode, RunConfig};
pub use container::{
    decode as decode_container, encode as encode_container, load_embedding, load_predictor, save_embedding, save_predictor,
    CONTAINER_VERSION, KIND_EMBEDDING, KIND_PREDICTOR, MAGIC,
};
pub use seqpack::{encode_f32, read_manifest, read_seqpack, write_seqpack, SeqPackManifest, SequenceRecord, FORMAT_VERSION, MANIFEST};
