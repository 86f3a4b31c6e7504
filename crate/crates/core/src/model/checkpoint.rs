//! Binary checkpoint: `"MCMR"`, `u16` version, `u32` icosphere level, `u32`
//! bank subdivisions, `u32` metadata length + JSON metadata, `u32` tensor
//! count, a directory of `(u16 name length, name, u8 rank, u64 dims…,
//! u64 offset, u64 length)` and finally the little-endian `f64` payload.
//! Offsets and lengths count `f64` values from the start of the payload.
//! Faces are not stored; they are regenerated from the level and the
//! subdivision count.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{MeanshapeBank, ModelConfig, ModelError, ModelParams};
use crate::diff::Tensor;
use crate::imageio::write_atomic;

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"MCMR";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Opaque trainer state (epoch, RNG position, optimizer moments are kept
    /// separately by the trainer).
    pub trainer: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    trainer: Option<serde_json::Value>,
}

fn err(m: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(m.into())
}

/// Serializes `params` plus `extra` named tensors (e.g. optimizer moments).
pub fn encode_checkpoint(
    params: &ModelParams,
    trainer: Option<&serde_json::Value>,
    extra: &[(String, Arc<Tensor>)],
) -> Result<Vec<u8>, ModelError> {
    let meta = serde_json::to_vec(&Meta {
        model: params.config.clone(),
        trainer: trainer.cloned(),
    })
    .map_err(|e| err(e.to_string()))?;
    let mut tensors = params.named_tensors();
    tensors.extend(extra.iter().cloned());

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&params.bank.level.to_le_bytes());
    out.extend_from_slice(&params.bank.splits.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in &tensors {
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        offset += t.len() as u64;
    }
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    save_checkpoint_with(params, None, &[], path)
}

pub fn save_checkpoint_with(
    params: &ModelParams,
    trainer: Option<&serde_json::Value>,
    extra: &[(String, Arc<Tensor>)],
    path: &Path,
) -> Result<(), ModelError> {
    let bytes = encode_checkpoint(params, trainer, extra)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| err("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint. Returns the model, trainer metadata and any tensors
/// beyond the model's own (in file order).
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Checkpoint, Vec<(String, Tensor)>), ModelError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(err("bad magic (not a checkpoint file)"));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let level = r.u32()?;
    let splits = r.u32()?;
    let meta_len = r.u32()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| err(format!("metadata: {e}")))?;
    let count = r.u32()? as usize;
    let mut directory = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| err("tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let offset = r.u64()? as usize;
        let len = r.u64()? as usize;
        if shape.iter().product::<usize>() != len {
            return Err(err(format!("tensor {name}: shape {shape:?} does not hold {len} values")));
        }
        directory.push((name, shape, offset, len));
    }
    let payload = &bytes[r.pos..];
    let total: usize = directory.iter().map(|d| d.3).sum();
    if payload.len() != total * 8 {
        return Err(err(format!(
            "payload holds {} bytes, directory needs {}",
            payload.len(),
            total * 8
        )));
    }

    let mut network = BTreeMap::new();
    let mut bank: Vec<(usize, Tensor)> = Vec::new();
    let mut extra = Vec::new();
    for (name, shape, offset, len) in directory {
        let end = offset.checked_add(len).filter(|&e| e <= total).ok_or_else(|| err(format!("tensor {name} out of range")))?;
        let data = payload[offset * 8..end * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data)?;
        if let Some(i) = name.strip_prefix("bank.").and_then(|i| i.parse::<usize>().ok()) {
            bank.push((i, t));
        } else if name.contains('/') {
            extra.push((name, t));
        } else {
            network.insert(name, Arc::new(t));
        }
    }
    bank.sort_by_key(|(i, _)| *i);
    if bank.iter().enumerate().any(|(j, (i, _))| *i != j) {
        return Err(err("bank tensors are not numbered 0..N"));
    }
    let bank = MeanshapeBank::from_vertices(bank.into_iter().map(|(_, t)| t).collect(), level, splits)?;

    let config = meta.model;
    config.validate()?;
    if bank.len() != config.num_meanshapes {
        return Err(err(format!(
            "{} meanshapes stored, config says {}",
            bank.len(),
            config.num_meanshapes
        )));
    }
    if level != config.icosphere_level {
        return Err(err(format!("bank level {level} differs from config level {}", config.icosphere_level)));
    }
    let expected = config.layers().len() * 2;
    if network.len() != expected {
        return Err(err(format!("{} network tensors stored, expected {expected}", network.len())));
    }
    for (layer, fan_in, fan_out) in config.layers() {
        let w = network.get(&format!("{layer}.weight"));
        let b = network.get(&format!("{layer}.bias"));
        let ok = w.is_some_and(|w| w.shape() == [fan_in, fan_out]) && b.is_some_and(|b| b.shape() == [fan_out]);
        if !ok {
            return Err(err(format!("layer {layer} missing or mis-shaped")));
        }
    }
    Ok((
        Checkpoint {
            params: ModelParams { config, network, bank },
            trainer: meta.trainer,
        },
        extra,
    ))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    Ok(load_checkpoint_with(path)?.0)
}

pub fn load_checkpoint_with(path: &Path) -> Result<(Checkpoint, Vec<(String, Tensor)>), ModelError> {
    let bytes = std::fs::read(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
