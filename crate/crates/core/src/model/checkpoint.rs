//! Checkpoint directory layout:
//!
//! ```text
//! config.toml     model hyperparameters
//! weights.bin     raw little-endian tensor data, concatenated
//! manifest.json   name / shape / dtype / byte offset per tensor
//! metadata.json   seed, step, dataset id, optional LoRA settings
//! ```

use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::nn::ParamStore;
use crate::model::{Denoiser, LoraConfig};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub seed: u64,
    pub step: u64,
    pub dataset_id: String,
    #[serde(default)]
    pub lora: Option<LoraConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    tensors: Vec<TensorEntry>,
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

fn parse_dtype(s: &str) -> Result<DType> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    })
}

/// Writes `weights.bin` and `manifest.json` for every parameter in `store`.
pub(crate) fn write_tensors(store: &ParamStore, dir: &Path) -> Result<()> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for p in store.params() {
        let t = p.var.as_tensor();
        let bytes = tensor_bytes(t)?;
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: t.dims().to_vec(),
            dtype: dtype_name(t.dtype())?.to_string(),
            offset: blob.len() as u64,
            nbytes: bytes.len() as u64,
        });
        blob.extend(bytes);
    }
    fs::write(dir.join("weights.bin"), blob)?;
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        tensors,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::Checkpoint(format!("missing {}", path.display())));
    }
    Ok(fs::read(path)?)
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_slice(&read_file(dir, "manifest.json")?)?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

/// Storage dtype recorded in the manifest.
pub(crate) fn stored_dtype(dir: &Path) -> Result<DType> {
    match read_manifest(dir)?.tensors.first() {
        Some(e) => parse_dtype(&e.dtype),
        None => Err(Error::Checkpoint("empty manifest".into())),
    }
}

/// Loads tensors into an already-built store with the same layout.
pub(crate) fn read_tensors(store: &ParamStore, dir: &Path) -> Result<()> {
    let manifest = read_manifest(dir)?;
    let blob = read_file(dir, "weights.bin")?;
    let params = store.params();
    if params.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, model has {}",
            manifest.tensors.len(),
            params.len()
        )));
    }
    for (p, e) in params.iter().zip(&manifest.tensors) {
        if p.name != e.name || p.var.dims() != e.shape.as_slice() {
            return Err(Error::Checkpoint(format!("tensor {} does not match model layout", e.name)));
        }
        let start = e.offset as usize;
        let end = start + e.nbytes as usize;
        let bytes = blob
            .get(start..end)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {} out of bounds", e.name)))?;
        let t = match parse_dtype(&e.dtype)? {
            DType::F32 => {
                let v: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
            }
            _ => {
                let v: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
            }
        };
        if t.elem_count() != p.var.elem_count() {
            return Err(Error::Checkpoint(format!("tensor {} has wrong size", e.name)));
        }
        p.var.set(&t.to_dtype(store.dtype())?)?;
    }
    Ok(())
}

pub(crate) fn write_metadata(dir: &Path, meta: &CheckpointMetadata) -> Result<()> {
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub(crate) fn read_metadata(dir: &Path) -> Result<CheckpointMetadata> {
    Ok(serde_json::from_slice(&read_file(dir, "metadata.json")?)?)
}

pub fn save_checkpoint(model: &Denoiser, dir: &Path, step: u64, dataset_id: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let config = toml::to_string_pretty(model.config()).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("config.toml"), config)?;
    write_tensors(model.store(), dir)?;
    write_metadata(
        dir,
        &CheckpointMetadata {
            seed: model.seed(),
            step,
            dataset_id: dataset_id.to_string(),
            lora: model.lora(),
        },
    )
}

pub fn load_config(dir: &Path) -> Result<ModelConfig> {
    let config: ModelConfig = load_toml(dir, "config.toml")?;
    config.validate()?;
    Ok(config)
}

/// Parses a TOML file inside a checkpoint directory.
pub(crate) fn load_toml<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::Checkpoint(format!("missing {}", path.display())));
    }
    let text = fs::read_to_string(&path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(dir: &Path) -> Result<(Denoiser, CheckpointMetadata)> {
    if !dir.is_dir() {
        return Err(Error::Checkpoint(format!("checkpoint directory {} not found", dir.display())));
    }
    let config = load_config(dir)?;
    let meta = read_metadata(dir)?;
    let mut model = Denoiser::new(config, stored_dtype(dir)?, meta.seed)?;
    if let Some(l) = meta.lora {
        model.apply_lora(l)?;
    }
    read_tensors(model.store(), dir)?;
    Ok((model, meta))
}
