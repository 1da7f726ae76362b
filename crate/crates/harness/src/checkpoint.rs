//! Checkpoint files: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header (model config, tensor table, metadata) and the tensor data
//! as little-endian `f32`.

use std::path::Path;

use arbiter_core::nn::{ModelConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, Result};
use crate::storage::write_atomic;
use crate::train::Trained;

pub const MAGIC: [u8; 8] = *b"ARBCKPT1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub setup: String,
    pub stage: String,
    pub seed: u64,
    pub subset_size: Option<usize>,
    pub best_step: usize,
    pub best_val: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    tensors: Vec<TensorInfo>,
    meta: CheckpointMeta,
}

pub fn encode(trained: &Trained, meta: &CheckpointMeta) -> Vec<u8> {
    let entries = trained.store.entries();
    let header = Header {
        model: trained.model.config.clone(),
        tensors: entries
            .iter()
            .map(|e| TensorInfo {
                name: e.name.clone(),
                rows: e.value.rows,
                cols: e.value.cols,
                trainable: e.trainable,
            })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * trained.store.num_trainable());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for e in entries {
        for &v in &e.value.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(Trained, CheckpointMeta)> {
    if bytes.len() < 16 || bytes[..8] != MAGIC {
        return Err(format_err(path, "not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < hlen {
        return Err(format_err(path, "truncated checkpoint header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| format_err(path, e.to_string()))?;
    let mut data = &body[hlen..];
    // Rebuild the architecture, then overwrite every tensor by name.
    let mut trained = Trained::new(&header.model, 0)?;
    if trained.store.len() != header.tensors.len() {
        return Err(format_err(
            path,
            format!("{} tensors stored, model has {}", header.tensors.len(), trained.store.len()),
        ));
    }
    for info in &header.tensors {
        let id = trained
            .store
            .find(&info.name)
            .ok_or_else(|| format_err(path, format!("unknown tensor {}", info.name)))?;
        if trained.store.value(id).shape() != (info.rows, info.cols) {
            return Err(format_err(path, format!("tensor {} has the wrong shape", info.name)));
        }
        let n = info.rows * info.cols;
        if data.len() < 4 * n {
            return Err(format_err(path, "truncated tensor data"));
        }
        let values = data[..4 * n]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        *trained.store.value_mut(id) = Tensor::from_vec(info.rows, info.cols, values);
        data = &data[4 * n..];
    }
    if !data.is_empty() {
        return Err(format_err(path, "trailing bytes after tensor data"));
    }
    Ok((trained, header.meta))
}

pub fn save(path: &Path, trained: &Trained, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &encode(trained, meta))
}

pub fn load(path: &Path) -> Result<(Trained, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes, path)
}
