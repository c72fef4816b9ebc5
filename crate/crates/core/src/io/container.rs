//! Binary container for trained parameters.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `RCNCLMDL` |
//! | 4 | version (u32, currently 1) |
//! | 4 | kind (u32: 1 embedding, 2 recurrent predictor) |
//! | 4 | number of dims `k` (u32) |
//! | 8·k | dims (u64 each) |
//! | 8 | parameter count `p` (u64) |
//! | 8·p | parameters (f64) |
//! | 32 | SHA-256 of every preceding byte |
//!
//! Embedding dims are (input, hidden, output); predictor dims are (input,
//! state, context length).

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dynamics::RecurrentPredictor;
use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RCNCLMDL";
pub const CONTAINER_VERSION: u32 = 1;
pub const KIND_EMBEDDING: u32 = 1;
pub const KIND_PREDICTOR: u32 = 2;

pub fn encode(kind: u32, dims: &[usize], params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * (dims.len() + params.len()) + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.file, self.pos as u64, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses and verifies a container; returns `(dims, params)`.
pub fn decode(bytes: &[u8], expect_kind: u32, file: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    if bytes.len() < 32 {
        return Err(Error::format(file, 0, "file too short for a model container"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::format(file, body.len() as u64, "checksum mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 0, file };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format(file, 0, "not a model container"));
    }
    let version = r.u32("version")?;
    if version != CONTAINER_VERSION {
        return Err(Error::format(file, 8, format!("unsupported container version {version}")));
    }
    let kind = r.u32("kind")?;
    if kind != expect_kind {
        return Err(Error::format(file, 12, format!("container holds kind {kind}, expected {expect_kind}")));
    }
    let k = r.u32("dim count")? as usize;
    let dims = (0..k).map(|_| r.u64("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let p = r.u64("parameter count")? as usize;
    if (body.len() - r.pos) / 8 != p || (body.len() - r.pos) % 8 != 0 {
        return Err(Error::format(file, r.pos as u64, format!("parameter block does not hold {p} values")));
    }
    let params = (0..p)
        .map(|_| r.take(8, "parameters").map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
        .collect::<Result<Vec<_>>>()?;
    if let Some(i) = params.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(file, (r.pos - 8 * (p - i)) as u64, "non-finite parameter"));
    }
    Ok((dims, params))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn dims_exactly<const N: usize>(dims: Vec<usize>, file: &Path) -> Result<[usize; N]> {
    dims.try_into()
        .map_err(|d: Vec<usize>| Error::format(file, 16, format!("expected {N} dims, found {}", d.len())))
}

pub fn save_embedding(model: &EmbeddingModel, path: &Path) -> Result<()> {
    let dims = [model.input_dim(), model.hidden_dim(), model.output_dim()];
    write(path, &encode(KIND_EMBEDDING, &dims, model.params()))
}

pub fn load_embedding(path: &Path) -> Result<EmbeddingModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dims, params) = decode(&bytes, KIND_EMBEDDING, path)?;
    let [f, h, d] = dims_exactly(dims, path)?;
    EmbeddingModel::from_params(f, h, d, params)
}

pub fn save_predictor(pred: &RecurrentPredictor, path: &Path) -> Result<()> {
    let dims = [pred.input_dim(), pred.state_dim(), pred.context_len()];
    write(path, &encode(KIND_PREDICTOR, &dims, pred.params()))
}

pub fn load_predictor(path: &Path) -> Result<RecurrentPredictor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dims, params) = decode(&bytes, KIND_PREDICTOR, path)?;
    let [d, m, l] = dims_exactly(dims, path)?;
    RecurrentPredictor::from_params(d, m, l, params)
}
