//! Checkpoint directory: `manifest.json` plus one little-endian f32 blob
//! per parameter.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Model, ModelConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dtype: String,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
    /// Free-form training metadata (epoch, losses, seeds).
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

fn blob_name(index: usize, name: &str) -> String {
    format!("{index:03}_{name}.f32")
}

pub fn save_checkpoint(model: &Model<f32>, dir: &Path, metadata: BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(model.params.len());
    for (i, p) in model.params.params.iter().enumerate() {
        let file = blob_name(i, &p.name);
        let bytes: Vec<u8> = p.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes)?;
        entries.push(ParamEntry { name: p.name.clone(), shape: p.shape.clone(), file });
    }
    let manifest = CheckpointManifest { dtype: "f32".into(), config: model.config().clone(), params: entries, metadata };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model<f32>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    if manifest.dtype != "f32" {
        return Err(Error::parse("checkpoint dtype", format!("unsupported '{}'", manifest.dtype)));
    }
    let mut model = Model::<f32>::new(manifest.config.clone())?;
    if manifest.params.len() != model.params.len() {
        return Err(Error::shape(
            format!("{} parameter tensors", model.params.len()),
            format!("{} parameter tensors", manifest.params.len()),
        ));
    }
    for (entry, param) in manifest.params.iter().zip(model.params.params.iter_mut()) {
        if entry.name != param.name || entry.shape != param.shape {
            return Err(Error::shape(
                format!("{} {:?}", param.name, param.shape),
                format!("{} {:?}", entry.name, entry.shape),
            ));
        }
        let bytes = fs::read(dir.join(&entry.file))?;
        if bytes.len() != param.data.len() * 4 {
            return Err(Error::shape(format!("{} bytes for {}", param.data.len() * 4, entry.name), format!("{} bytes", bytes.len())));
        }
        for (v, chunk) in param.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    Ok((model, manifest))
}
