use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::FloatModel;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub(crate) const BLOB_FILE: &str = "weights.bin";

/// One row of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
    pub byte_offset: u64,
    pub byte_len: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    val_accuracy: Option<f64>,
}

pub(crate) fn ckpt_err(dir: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint { path: dir.to_path_buf(), reason: reason.into() }
}

/// Writes `items` as one blob file plus `manifest.json`.
pub(crate) fn write_manifest_blobs(dir: &Path, file: &str, items: Vec<(String, Vec<usize>, &str, Vec<u8>)>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut manifest = Vec::with_capacity(items.len());
    for (name, shape, dtype, bytes) in items {
        let offset = blob.len() as u64;
        blob.extend_from_slice(&bytes);
        manifest.push(ManifestEntry {
            name,
            shape,
            dtype: dtype.into(),
            file: file.into(),
            byte_offset: offset,
            byte_len: bytes.len() as u64,
        });
    }
    fs::write(dir.join(file), &blob)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Writes `manifest.json`, `model.json` and one little-endian `f32` blob.
pub fn save_checkpoint(model: &FloatModel, dir: &Path) -> Result<()> {
    let items = model
        .tensors
        .iter()
        .map(|(name, t)| {
            let bytes = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (name.clone(), t.shape().to_vec(), "f32", bytes)
        })
        .collect();
    write_manifest_blobs(dir, BLOB_FILE, items)?;
    let meta = ModelMeta {
        config: model.config.clone(),
        train_accuracy: model.train_accuracy,
        val_accuracy: model.val_accuracy,
    };
    fs::write(dir.join("model.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Reads a manifest and slices little-endian blobs out of the files it names.
pub(crate) fn read_manifest_blobs(dir: &Path) -> Result<Vec<(ManifestEntry, Vec<u8>)>> {
    let text = fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| ckpt_err(dir, format!("missing manifest.json: {e}")))?;
    let manifest: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| ckpt_err(dir, format!("corrupt manifest.json: {e}")))?;
    let mut files: std::collections::BTreeMap<String, Vec<u8>> = Default::default();
    let mut out = Vec::with_capacity(manifest.len());
    for e in manifest {
        if e.file.contains('/') || e.file.contains("..") {
            return Err(ckpt_err(dir, format!("blob file `{}` escapes the checkpoint", e.file)));
        }
        if !files.contains_key(&e.file) {
            let bytes = fs::read(dir.join(&e.file))
                .map_err(|err| ckpt_err(dir, format!("missing blob {}: {err}", e.file)))?;
            files.insert(e.file.clone(), bytes);
        }
        let bytes = &files[&e.file];
        let end = e.byte_offset.checked_add(e.byte_len).filter(|&end| end <= bytes.len() as u64);
        let Some(end) = end else {
            return Err(ckpt_err(dir, format!("{} overruns blob {}", e.name, e.file)));
        };
        let slice = bytes[e.byte_offset as usize..end as usize].to_vec();
        out.push((e, slice));
    }
    // A blob longer than the manifest accounts for has been tampered with.
    for (file, bytes) in &files {
        let claimed: u64 = out.iter().filter(|(e, _)| &e.file == file).map(|(e, _)| e.byte_len).sum();
        if claimed != bytes.len() as u64 {
            return Err(ckpt_err(dir, format!("blob {file} is {} bytes, manifest accounts for {claimed}", bytes.len())));
        }
    }
    Ok(out)
}

pub fn load_checkpoint(dir: &Path) -> Result<FloatModel> {
    let meta: ModelMeta = serde_json::from_str(
        &fs::read_to_string(dir.join("model.json")).map_err(|e| ckpt_err(dir, format!("missing model.json: {e}")))?,
    )
    .map_err(|e| ckpt_err(dir, format!("corrupt model.json: {e}")))?;
    let mut tensors = Vec::new();
    for (e, bytes) in read_manifest_blobs(dir)? {
        if e.dtype != "f32" {
            return Err(ckpt_err(dir, format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(ckpt_err(dir, format!("{}: {} bytes for shape {:?}", e.name, bytes.len(), e.shape)));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
    }
    let model = FloatModel {
        config: meta.config,
        tensors,
        train_accuracy: meta.train_accuracy,
        val_accuracy: meta.val_accuracy,
    };
    // Validates names and shapes against the architecture.
    model.weights().map_err(|e| ckpt_err(dir, e.to_string()))?;
    Ok(model)
}
