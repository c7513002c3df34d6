//! Binary model checkpoints.
//!
//! Layout: the 8-byte magic `CAPSCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header, then
//! the raw little-endian payload of every tensor back to back. The header
//! records the model configuration, the scalar type, free-form
//! hyperparameters and, per tensor, its name, shape and byte offset into
//! the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Param};
use crate::error::{Error, Result};
use crate::tensor::{numel, Scalar, Tensor};

const MAGIC: &[u8; 8] = b"CAPSCKPT";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    scalar: String,
    hyperparameters: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A model with the hyperparameters it was trained under.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub hyperparameters: serde_json::Value,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut offset = 0;
        for p in self.model.params() {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset,
            });
            offset += p.value.len() * T::BYTES;
        }
        let header = Header {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: *self.model.config(),
            scalar: T::NAME.into(),
            hyperparameters: self.hyperparameters.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in self.model.params() {
            for &v in p.value.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
        if header.scalar != T::NAME {
            return Err(bad(format!("stored as {}, requested {}", header.scalar, T::NAME)));
        }
        let payload = &bytes[20 + len..];
        let mut params = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n = numel(&e.shape);
            let raw = payload
                .get(e.offset..e.offset + n * T::BYTES)
                .ok_or_else(|| bad(format!("payload of {} is truncated", e.name)))?;
            let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            params.push(Param {
                value: Tensor::from_vec(&e.shape, data).map_err(|err| bad(err.to_string()))?,
                name: e.name,
            });
        }
        let model = Model::from_params(header.model, params).map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            model,
            hyperparameters: header.hyperparameters,
        })
    }
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &Model<T>, hyperparameters: &serde_json::Value) -> Result<()> {
    let ckpt = Checkpoint {
        model: model.clone(),
        hyperparameters: hyperparameters.clone(),
    };
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
