//! Checkpoints: a JSON manifest plus a sidecar blob of little-endian `f64`s.
//!
//! The manifest lists every tensor (parameter values, then Adam first and
//! second moments) in blob order with its shape and byte offset. Adam step
//! counts live in the manifest. The blob sits next to the manifest with the
//! extension replaced by `.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dtype: String,
    pub byte_order: String,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
    pub adam_steps: Vec<(String, u64)>,
    /// Free-form model description (layer specs, training config).
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_checkpoint(store: &ParamStore, manifest_path: &Path, meta: serde_json::Value) -> Result<()> {
    let blob_file = blob_path(manifest_path);
    let mut blob = Vec::with_capacity(store.num_values() * 8 * 3);
    let mut tensors = Vec::new();
    let roles = [TensorRole::Param, TensorRole::AdamM, TensorRole::AdamV];
    for role in roles {
        for p in store.iter() {
            let data = match role {
                TensorRole::Param => p.value().data(),
                TensorRole::AdamM => p.first_moment(),
                TensorRole::AdamV => p.second_moment(),
            };
            tensors.push(TensorEntry {
                name: p.name().to_string(),
                role,
                shape: p.value().shape().to_vec(),
                offset: blob.len() as u64,
                len: data.len(),
            });
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let manifest = CheckpointManifest {
        dtype: "f64".into(),
        byte_order: "little".into(),
        blob: blob_file
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors,
        adam_steps: store.iter().map(|p| (p.name().to_string(), p.step())).collect(),
        meta,
    };
    if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
    fs::write(&blob_file, blob).map_err(|e| Error::io(&blob_file, e))?;
    Ok(())
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<(ParamStore, CheckpointManifest)> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let bad = |msg: String| Error::Parse {
        path: manifest_path.to_path_buf(),
        line: 0,
        message: msg,
    };
    if manifest.dtype != "f64" || manifest.byte_order != "little" {
        return Err(bad(format!(
            "unsupported encoding {} / {}",
            manifest.dtype, manifest.byte_order
        )));
    }
    let blob_file = manifest_path.with_file_name(&manifest.blob);
    let blob = fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;

    let read = |e: &TensorEntry| -> Result<Vec<f64>> {
        let start = e.offset as usize;
        let end = start + e.len * 8;
        if end > blob.len() || e.shape.iter().product::<usize>() != e.len {
            return Err(bad(format!("tensor {} out of bounds or misshapen", e.name)));
        }
        Ok(blob[start..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect())
    };
    let find = |name: &str, role: TensorRole| {
        manifest
            .tensors
            .iter()
            .find(|e| e.name == name && e.role == role)
            .ok_or_else(|| bad(format!("missing {role:?} tensor for {name}")))
    };

    let mut store = ParamStore::new();
    for entry in manifest.tensors.iter().filter(|e| e.role == TensorRole::Param) {
        let value = Tensor::new(entry.shape.clone(), read(entry)?)?;
        let m = read(find(&entry.name, TensorRole::AdamM)?)?;
        let v = read(find(&entry.name, TensorRole::AdamV)?)?;
        let step = manifest
            .adam_steps
            .iter()
            .find(|(n, _)| n == &entry.name)
            .map(|(_, s)| *s)
            .unwrap_or(0);
        store.insert_with_state(entry.name.clone(), value, m, v, step)?;
    }
    Ok((store, manifest))
}
