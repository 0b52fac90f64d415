//! Checkpoints: one matrix text file per tensor plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{init_params, ModelConfig, ModelParams};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub step: usize,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(params: &ModelParams, dir: &Path, step: usize) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    for (info, m) in params.tensors() {
        let file = format!("{}.txt", info.name);
        fs::write(dir.join(&file), m.to_text())?;
        tensors.push(TensorEntry { name: info.name, file, rows: m.rows(), cols: m.cols() });
    }
    let manifest = Manifest { step, config: params.config.clone(), tensors };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut params = init_params(&manifest.config, 0)?;
    let slots = params.tensors_mut();
    if slots.len() != manifest.tensors.len() {
        return Err(Error::Manifest(format!(
            "{} lists {} tensors, config implies {}",
            dir.display(),
            manifest.tensors.len(),
            slots.len()
        )));
    }
    for ((info, slot), entry) in slots.into_iter().zip(&manifest.tensors) {
        if info.name != entry.name {
            return Err(Error::Manifest(format!("expected tensor '{}', found '{}'", info.name, entry.name)));
        }
        let m = Matrix::from_text(&fs::read_to_string(dir.join(&entry.file))?)?;
        if m.shape() != slot.shape() || m.shape() != (entry.rows, entry.cols) {
            return Err(Error::Manifest(format!(
                "tensor '{}' has shape {:?}, expected {:?}",
                entry.name,
                m.shape(),
                slot.shape()
            )));
        }
        *slot = m;
    }
    Ok((params, manifest))
}
