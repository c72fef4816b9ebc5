//! SeqPack: a directory holding `manifest.json` plus one raw payload file per
//! sequence (and per latent track). Payloads are row-major 32-bit
//! little-endian IEEE-754 floats; values are widened to 64 bits on load.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::base::{Dataset, Sequence};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqPackManifest {
    pub version: u32,
    pub feature_dim: usize,
    /// 0 when the pack carries no latent tracks.
    pub latent_dim: usize,
    pub sequences: Vec<SequenceRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceRecord {
    pub id: String,
    pub frames: usize,
    pub data: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<String>,
}

pub fn encode_f32(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn decode_f32(bytes: &[u8], rows: usize, cols: usize, file: &Path) -> Result<Array2<f64>> {
    let expected = 4 * rows * cols;
    if bytes.len() != expected {
        return Err(Error::format(
            file,
            bytes.len().min(expected) as u64,
            format!("expected {expected} bytes ({rows} x {cols} floats), found {}", bytes.len()),
        ));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::format(file, 4 * i as u64, format!("non-finite value {v}")));
        }
        out.push(v as f64);
    }
    Ok(Array2::from_shape_vec((rows, cols), out).expect("length checked"))
}

fn payload_name(index: usize, latent: bool) -> String {
    if latent {
        format!("seq{index:05}.latent.f32")
    } else {
        format!("seq{index:05}.f32")
    }
}

/// Writes `dataset` into directory `dir`, creating it if needed.
pub fn write_seqpack(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let latent_dim = dataset.latent_dim().unwrap_or(0);
    let mut records = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.sequences().iter().enumerate() {
        let data = payload_name(i, false);
        let path = dir.join(&data);
        fs::write(&path, encode_f32(s.frames().iter().copied())).map_err(|e| Error::io(&path, e))?;
        let latent = match s.latent() {
            Some(z) if latent_dim > 0 => {
                let name = payload_name(i, true);
                let path = dir.join(&name);
                fs::write(&path, encode_f32(z.iter().copied())).map_err(|e| Error::io(&path, e))?;
                Some(name)
            }
            _ => None,
        };
        records.push(SequenceRecord {
            id: s.id.clone(),
            frames: s.len(),
            data,
            latent,
        });
    }
    let manifest = SeqPackManifest {
        version: FORMAT_VERSION,
        feature_dim: dataset.dim(),
        latent_dim,
        sequences: records,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<SeqPackManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SeqPackManifest = serde_json::from_str(&text).map_err(|e| {
        let offset = text.lines().take(e.line().saturating_sub(1)).map(|l| l.len() + 1).sum::<usize>() + e.column().saturating_sub(1);
        Error::format(&path, offset as u64, e.to_string())
    })?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::format(&path, 0, format!("unsupported version {}", manifest.version)));
    }
    Ok(manifest)
}

/// Loads a SeqPack directory.
pub fn read_seqpack(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for rec in &manifest.sequences {
        let path = dir.join(&rec.data);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let frames = decode_f32(&bytes, rec.frames, manifest.feature_dim, &path)?;
        let latent = match (&rec.latent, manifest.latent_dim) {
            (Some(name), q) if q > 0 => {
                let path = dir.join(name);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                Some(decode_f32(&bytes, rec.frames, q, &path)?)
            }
            (Some(_), _) => return Err(Error::format(dir.join(MANIFEST), 0, format!("sequence {:?} has a latent file but latent_dim is 0", rec.id))),
            (None, _) => None,
        };
        sequences.push(Sequence::new(rec.id.clone(), frames, latent)?);
    }
    Dataset::new(manifest.feature_dim, sequences)
}
