//! Checkpoint files: an 8-byte magic, a little-endian `u64` manifest length,
//! the JSON manifest, then every tensor as raw little-endian `f64`s.
//! Manifest offsets are byte offsets into that trailing blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ActivationFamily, ModelConfig};
use super::model::{build_model, Model, TrainingMeta};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SFCKPT01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub activation_family: ActivationFamily,
    pub config: ModelConfig,
    pub meta: TrainingMeta,
    pub tensors: Vec<TensorEntry>,
}

pub fn checkpoint_to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    let all = model
        .params()
        .into_iter()
        .map(|(n, t)| (n, EntryKind::Param, t))
        .chain(
            model
                .buffers()
                .into_iter()
                .map(|(n, t)| (n, EntryKind::Buffer, t)),
        );
    for (name, kind, t) in all {
        tensors.push(TensorEntry {
            name,
            kind,
            shape: t.shape().to_vec(),
            offset: blob.len(),
            len: t.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: 1,
        activation_family: model.activation_family(),
        config: model.config().clone(),
        meta: model.meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Model> {
    let parse = |offset: usize, message: &str| Error::Parse {
        offset,
        message: message.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(parse(0, "missing checkpoint magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json_end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| parse(8, "manifest length exceeds file size"))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[16..json_end])
        .map_err(|e| parse(16, &format!("manifest: {e}")))?;
    if manifest.activation_family != manifest.config.activation {
        return Err(parse(16, "activation family disagrees with model config"));
    }
    let blob = &bytes[json_end..];
    let mut model = build_model(&manifest.config, 0)?;
    model.meta = manifest.meta.clone();
    let read = |e: &TensorEntry| -> Result<Tensor> {
        let end = e.offset + e.len * 8;
        if end > blob.len() {
            return Err(parse(
                json_end + e.offset,
                &format!("tensor `{}` truncated", e.name),
            ));
        }
        let data = blob[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(e.shape.clone(), data)
    };
    let fill = |kind: EntryKind, names: Vec<String>, slots: Vec<&mut Tensor>| -> Result<()> {
        for (name, slot) in names.into_iter().zip(slots) {
            let e = manifest
                .tensors
                .iter()
                .find(|e| e.kind == kind && e.name == name)
                .ok_or_else(|| {
                    Error::MissingResource(format!("checkpoint lacks tensor `{name}`"))
                })?;
            let t = read(e)?;
            if t.shape() != slot.shape() {
                return Err(Error::dim(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(())
    };
    let pnames: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let bnames: Vec<String> = model.buffers().into_iter().map(|(n, _)| n).collect();
    fill(EntryKind::Param, pnames, model.params_mut())?;
    fill(EntryKind::Buffer, bnames, model.buffers_mut())?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
