//! Checkpoints are safetensors files: parameters under `param.<name>`, AdamW moments
//! under `adam_m.<name>` / `adam_v.<name>`, and string metadata (`config_hash`,
//! `step`, `model_config` and any extra keys).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};

use super::{optim::AdamW, params::ParamStore};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub step: usize,
    /// JSON-encoded model configuration needed to rebuild the network.
    pub model_config: String,
    pub extra: BTreeMap<String, String>,
}

pub fn save_checkpoint(path: &Path, params: &ParamStore, optim: Option<&AdamW>, meta: &CheckpointMeta) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    for (name, var) in params.vars() {
        tensors.push((format!("param.{name}"), var.as_tensor().contiguous()?));
    }
    if let Some(opt) = optim {
        for (name, m, v) in opt.state() {
            tensors.push((format!("adam_m.{name}"), m.contiguous()?));
            tensors.push((format!("adam_v.{name}"), v.contiguous()?));
        }
    }
    let mut info: HashMap<String, String> = meta.extra.clone().into_iter().collect();
    info.insert("config_hash".into(), meta.config_hash.clone());
    info.insert("step".into(), meta.step.to_string());
    info.insert("model_config".into(), meta.model_config.clone());
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    safetensors::serialize_to_file(tensors.iter().map(|(n, t)| (n.as_str(), t)), Some(info), path)?;
    Ok(())
}

/// Reads only the metadata block.
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    meta_from_bytes(path, &bytes)
}

fn meta_from_bytes(path: &Path, bytes: &[u8]) -> Result<CheckpointMeta> {
    let (_, metadata) = safetensors::SafeTensors::read_metadata(bytes)?;
    let mut info: BTreeMap<String, String> = metadata.metadata().clone().unwrap_or_default().into_iter().collect();
    let format_err = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.into() };
    let config_hash = info.remove("config_hash").ok_or_else(|| format_err("missing config_hash"))?;
    let step = info
        .remove("step")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err("missing or invalid step"))?;
    let model_config = info.remove("model_config").unwrap_or_default();
    Ok(CheckpointMeta { config_hash, step, model_config, extra: info })
}

/// Loads parameters (and optimizer moments when `optim` is given) into existing stores.
pub fn load_checkpoint(path: &Path, params: &ParamStore, optim: Option<&mut AdamW>) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = meta_from_bytes(path, &bytes)?;
    let all = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    let mut values = BTreeMap::new();
    for (k, v) in all.iter() {
        if let Some(name) = k.strip_prefix("param.") {
            values.insert(name.to_string(), v.clone());
        }
    }
    params.assign(&values)?;
    if let Some(opt) = optim {
        let dtype = params.dtype();
        opt.restore(meta.step, |name| {
            let m = all.get(&format!("adam_m.{name}"))?.to_dtype(dtype).ok()?;
            let v = all.get(&format!("adam_v.{name}"))?.to_dtype(dtype).ok()?;
            Some((m, v))
        })?;
    }
    Ok(meta)
}
