//! Checkpoint container:
//!
//! ```text
//! magic (8 bytes) | manifest length (u64 LE) | manifest JSON | parameter values
//! ```
//!
//! Values are little-endian in the manifest's dtype, parameter by parameter
//! in manifest order, each row-major.

use serde::{Deserialize, Serialize};

use planar_gatr_core::autodiff::ParamStore;
use planar_gatr_core::model::Model;
use planar_gatr_core::{DType, Real};

use super::{IoError, Provenance};
use crate::config::{DTypeDto, ModelSection};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PGATRCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub provenance: Provenance,
    pub dtype: DTypeDto,
    /// Seed the parameters were initialized from.
    pub init_seed: u64,
    pub config: ModelSection,
    pub vocab_hash: String,
    pub params: Vec<ParamEntry>,
}

/// A loaded checkpoint. Parameters are widened to f64; an f32 checkpoint
/// casts back to the same bits.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub model: Model<f64>,
}

pub fn checkpoint_to_bytes<T: Real>(model: &Model<T>, vocab_hash: &str, provenance: Provenance) -> Vec<u8> {
    let dtype = DType::parse(T::NAME).expect("Real is f32 or f64");
    let manifest = CheckpointManifest {
        provenance,
        dtype: dtype.into(),
        init_seed: model.cfg.seed,
        config: ModelSection::from_config(&model.cfg),
        vocab_hash: vocab_hash.to_string(),
        params: model.store.iter().map(|(_, p)| ParamEntry { name: p.name.clone(), shape: p.shape.clone() }).collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serialization cannot fail");
    let mut out = Vec::with_capacity(16 + json.len() + model.store.numel() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.store.iter() {
        for &v in &p.data {
            match dtype {
                DType::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint, IoError> {
    let bad = |m: &str| IoError::Parse { what: "checkpoint", msg: m.to_string() };
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing magic header"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("manifest truncated"))?;
    let manifest: CheckpointManifest = serde_json::from_slice(body).map_err(|e| bad(&format!("manifest: {e}")))?;
    let dtype: DType = manifest.dtype.into();
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut data = &bytes[16 + len..];
    let mut store = ParamStore::<f64>::new();
    for p in &manifest.params {
        let n: usize = p.shape.iter().product();
        if data.len() < n * width {
            return Err(bad(&format!("data for `{}` truncated", p.name)));
        }
        let (chunk, rest) = data.split_at(n * width);
        data = rest;
        let values: Vec<f64> = match dtype {
            DType::F32 => chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            DType::F64 => chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        };
        store.insert(&p.name, &p.shape, values).map_err(|e| bad(&e.to_string()))?;
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes after parameter data"));
    }
    let cfg = manifest.config.to_config(dtype, manifest.init_seed);
    let model = Model::from_store(cfg, store)?;
    Ok(Checkpoint { manifest, model })
}
