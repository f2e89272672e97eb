//! Checkpoint format: a small binary container holding the model config and
//! named parameter tensors. Byte-stable for identical model states.
//!
//! Layout: magic `CPCK`, u32 version, u32 JSON header length, JSON header
//! (tool version, dtype, config, tensor manifest), then raw little-endian
//! tensor data concatenated in manifest order.

use crate::autodiff::Real;
use crate::model::{Model, ModelConfig, Param};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CPCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tool_version: String,
    dtype: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes<T: Real>(model: &Model<T>) -> Result<Vec<u8>> {
    let header = Header {
        tool_version: crate::VERSION.to_string(),
        dtype: T::DTYPE.to_string(),
        config: model.config.clone(),
        tensors: model
            .params()
            .iter()
            .map(|p| TensorEntry { name: p.name.clone(), shape: p.shape.clone() })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let data_len: usize = model.params().iter().map(|p| p.data.len()).sum();
    let mut out = Vec::with_capacity(12 + header_bytes.len() + data_len * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for p in model.params() {
        for &v in &p.data {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<Model<T>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])?;
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "dtype mismatch: file holds {}, requested {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let mut offset = 12 + header_len;
    let mut params = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = offset + n * T::BYTES;
        if bytes.len() < end {
            return Err(Error::Checkpoint(format!("truncated data for tensor {}", entry.name)));
        }
        let data = bytes[offset..end]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        params.push(Param { name: entry.name, shape: entry.shape, data });
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    Model::from_params(header.config, params)
}

pub fn save<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<Model<T>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}

/// SHA-256 of a serialized model state; used to assert that evaluation does
/// not mutate the model.
pub fn state_hash<T: Real>(model: &Model<T>) -> Result<String> {
    let digest = Sha256::digest(to_bytes(model)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
