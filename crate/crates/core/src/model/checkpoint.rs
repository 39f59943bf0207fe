//! Checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "SYMTCKPT"
//! version      u32      1
//! header_len   u32
//! header       UTF-8 JSON {"format_version": 1, "config": ModelConfig, "metadata": any}
//! n_tensors    u32
//! tensor*      { name_len: u32, name: [u8; name_len], ndim: u32, dims: [u32; ndim],
//!                data: [f32; product(dims)] }
//! ```
//!
//! Tensors appear in [`layout`](super::layout) order, but readers match them
//! by name and shape.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{layout, ModelConfig, ModelParams};
use super::ModelError;
use crate::util::atomic_write;

const MAGIC: &[u8; 8] = b"SYMTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub metadata: serde_json::Value,
}

pub fn write_checkpoint(params: &ModelParams<f32>, metadata: &serde_json::Value) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        format_version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        metadata: metadata.clone(),
    })
    .expect("header serializes");
    let specs = layout(&params.config);
    let mut out = Vec::with_capacity(24 + header.len() + params.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
    for s in &specs {
        out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
        out.extend_from_slice(s.name.as_bytes());
        out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
        for &d in &s.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in &params.data[s.range()] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], ModelError> {
        let s = bytes
            .get(pos..pos.checked_add(n).ok_or_else(|| bad("length overflow".into()))?)
            .ok_or_else(|| bad("truncated checkpoint".into()))?;
        pos += n;
        Ok(s)
    };
    let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    if take(8)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32_of(take(4)?);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = u32_of(take(4)?) as usize;
    let header: Header = serde_json::from_slice(take(header_len)?).map_err(|e| bad(format!("header: {e}")))?;
    header.config.validate()?;
    let specs = layout(&header.config);
    let mut data = vec![0f32; specs.iter().map(|s| s.len()).sum()];
    let mut seen = vec![false; specs.len()];
    let n = u32_of(take(4)?) as usize;
    for _ in 0..n {
        let name_len = u32_of(take(4)?) as usize;
        let name = std::str::from_utf8(take(name_len)?).map_err(|_| bad("tensor name not UTF-8".into()))?.to_string();
        let ndim = u32_of(take(4)?) as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(u32_of(take(4)?) as usize);
        }
        let idx = specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| bad(format!("unknown tensor {name}")))?;
        let spec = &specs[idx];
        if spec.shape != shape {
            return Err(bad(format!("tensor {name}: shape {shape:?}, expected {:?}", spec.shape)));
        }
        if seen[idx] {
            return Err(bad(format!("duplicate tensor {name}")));
        }
        seen[idx] = true;
        let raw = take(spec.len() * 4)?;
        for (dst, chunk) in data[spec.range()].iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(bad(format!("missing tensor {}", specs[i].name)));
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    let params = ModelParams {
        config: header.config,
        data,
    };
    if !params.is_finite() {
        return Err(bad("non-finite weights".into()));
    }
    Ok(Checkpoint {
        params,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams<f32>, metadata: &serde_json::Value) -> Result<(), ModelError> {
    atomic_write(path, &write_checkpoint(params, metadata))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    read_checkpoint(&std::fs::read(path)?)
}
