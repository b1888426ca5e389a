//! Binary checkpoint format for base and upscaled models.
//!
//! Layout: an 8-byte magic, a format version, a kind byte, a JSON metadata
//! blob (config, and the upscale plan for upscaled models), then every
//! tensor in canonical key order as `(name, rows, cols, row-major f64 LE)`.
//! Tensor bytes are written with `f64::to_le_bytes`, so a save/load round
//! trip is bit-exact and preservation checks survive serialization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::base::BaseParams;
use super::config::{ModelConfig, UpscalePlan};
use super::keys::ParamKey;
use super::upscale::{upscale_model, UpscaledModel};
use super::{ModelError, Result};
use crate::numerics::Array2;

const MAGIC: &[u8; 8] = b"WIDTHLAB";
const VERSION: u32 = 1;
const KIND_BASE: u8 = 0;
const KIND_UPSCALED: u8 = 1;

#[derive(Serialize, Deserialize)]
struct UpscaledMeta {
    config: ModelConfig,
    plan: UpscalePlan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Base,
    Upscaled,
}

/// Reads just enough of the header to tell base from upscaled checkpoints.
pub fn checkpoint_kind(path: &Path) -> Result<CheckpointKind> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::BadCheckpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ModelError::BadCheckpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    match kind[0] {
        KIND_BASE => Ok(CheckpointKind::Base),
        KIND_UPSCALED => Ok(CheckpointKind::Upscaled),
        k => Err(ModelError::BadCheckpoint(format!(
            "unknown checkpoint kind {k}"
        ))),
    }
}

pub fn save_base(path: &Path, params: &BaseParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let meta = serde_json::to_vec(&params.config)
        .map_err(|e| ModelError::BadCheckpoint(format!("encode config: {e}")))?;
    write_header(&mut w, KIND_BASE, &meta)?;
    let keys = params.keys();
    write_len(&mut w, keys.len() as u64)?;
    for key in &keys {
        write_tensor(&mut w, &key.name(), params.param(*key))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_base(path: &Path) -> Result<BaseParams> {
    let mut r = BufReader::new(File::open(path)?);
    let meta = read_header(&mut r, KIND_BASE)?;
    let config: ModelConfig = serde_json::from_slice(&meta)
        .map_err(|e| ModelError::BadCheckpoint(format!("decode config: {e}")))?;
    config.validate()?;
    let mut params = BaseParams::init(&config, 0)?;
    read_tensors(&mut r, params.keys(), |key, tensor| {
        assign(params.param_mut(key), key, tensor)
    })?;
    Ok(params)
}

pub fn save_upscaled(path: &Path, model: &UpscaledModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let meta = serde_json::to_vec(&UpscaledMeta {
        config: model.config.clone(),
        plan: model.plan.clone(),
    })
    .map_err(|e| ModelError::BadCheckpoint(format!("encode metadata: {e}")))?;
    write_header(&mut w, KIND_UPSCALED, &meta)?;
    let keys = model.keys();
    write_len(&mut w, keys.len() as u64)?;
    for key in &keys {
        write_tensor(&mut w, &key.name(), model.param(*key))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_upscaled(path: &Path) -> Result<UpscaledModel> {
    let mut r = BufReader::new(File::open(path)?);
    let meta = read_header(&mut r, KIND_UPSCALED)?;
    let meta: UpscaledMeta = serde_json::from_slice(&meta)
        .map_err(|e| ModelError::BadCheckpoint(format!("decode metadata: {e}")))?;
    meta.config.validate()?;
    meta.plan.validate(&meta.config)?;

    // Build a shape-compatible model, then overwrite every tensor from the
    // file. Zero init blocks sidesteps the SVD work a fresh upscale would do.
    let scaffold_base = BaseParams::init(&meta.config, 0)?;
    let mut shape_plan = meta.plan.clone();
    shape_plan.init_w21 = super::config::InitKind::Zero;
    shape_plan.init_w22 = super::config::InitKind::Zero;
    let (mut model, _) = upscale_model(&scaffold_base, &shape_plan)?;
    model.plan = meta.plan;

    read_tensors(&mut r, model.keys(), |key, tensor| {
        assign(model.param_mut(key), key, tensor)
    })?;
    Ok(model)
}

fn assign(slot: &mut Array2, key: ParamKey, tensor: Array2) -> Result<()> {
    if slot.shape() != tensor.shape() {
        return Err(ModelError::BadCheckpoint(format!(
            "tensor {} has shape {:?}, expected {:?}",
            key.name(),
            tensor.shape(),
            slot.shape()
        )));
    }
    *slot = tensor;
    Ok(())
}

fn write_header(w: &mut impl Write, kind: u8, meta: &[u8]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[kind])?;
    write_len(w, meta.len() as u64)?;
    w.write_all(meta)?;
    Ok(())
}

fn read_header(r: &mut impl Read, want_kind: u8) -> Result<Vec<u8>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::BadCheckpoint("bad magic bytes".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(ModelError::BadCheckpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    if kind[0] != want_kind {
        let (want, got) = (kind_name(want_kind), kind_name(kind[0]));
        return Err(ModelError::BadCheckpoint(format!(
            "expected a {want} checkpoint, found {got}"
        )));
    }
    let len = read_len(r)? as usize;
    let mut meta = vec![0u8; len];
    r.read_exact(&mut meta)?;
    Ok(meta)
}

fn kind_name(kind: u8) -> &'static str {
    match kind {
        KIND_BASE => "base",
        KIND_UPSCALED => "upscaled",
        _ => "unknown",
    }
}

fn read_tensors(
    r: &mut impl Read,
    keys: Vec<ParamKey>,
    mut place: impl FnMut(ParamKey, Array2) -> Result<()>,
) -> Result<()> {
    let count = read_len(r)? as usize;
    if count != keys.len() {
        return Err(ModelError::BadCheckpoint(format!(
            "checkpoint holds {count} tensors, expected {}",
            keys.len()
        )));
    }
    for key in keys {
        let (name, tensor) = read_tensor(r)?;
        if name != key.name() {
            return Err(ModelError::BadCheckpoint(format!(
                "tensor order mismatch: found {name}, expected {}",
                key.name()
            )));
        }
        place(key, tensor)?;
    }
    Ok(())
}

fn write_tensor(w: &mut impl Write, name: &str, a: &Array2) -> Result<()> {
    write_len(w, name.len() as u64)?;
    w.write_all(name.as_bytes())?;
    let (rows, cols) = a.shape();
    write_len(w, rows as u64)?;
    write_len(w, cols as u64)?;
    for &v in a.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<(String, Array2)> {
    let name_len = read_len(r)? as usize;
    if name_len > 1024 {
        return Err(ModelError::BadCheckpoint(format!(
            "implausible tensor name length {name_len}"
        )));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| ModelError::BadCheckpoint("tensor name is not UTF-8".into()))?;
    let rows = read_len(r)? as usize;
    let cols = read_len(r)? as usize;
    let mut data = vec![0u8; 8 * rows * cols];
    r.read_exact(&mut data)?;
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let tensor = Array2::from_vec(rows, cols, values)
        .map_err(|e| ModelError::BadCheckpoint(format!("tensor {name}: {e}")))?;
    Ok((name, tensor))
}

fn write_len(w: &mut impl Write, len: u64) -> Result<()> {
    w.write_all(&len.to_le_bytes())?;
    Ok(())
}

fn read_len(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
