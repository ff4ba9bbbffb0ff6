//! Checkpoint directory: `manifest.json` plus `params.bin`, the parameters'
//! little-endian scalars concatenated in manifest order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::SepVit;
use crate::error::{CheckpointError, Error, Result};
use crate::nn::Module;
use crate::tensor::{DType, Scalar, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: DType,
    pub config: ModelConfig,
    pub params: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            message: format!("line {} column {}: {e}", e.line(), e.column()),
        })
    }

    /// Scalars across all entries.
    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }
}

pub fn save<T: Scalar>(model: &SepVit<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = Vec::new();
    let mut blob = Vec::new();
    model.visit(&mut |p| {
        params.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
        });
        for &v in p.value.data() {
            v.write_le(&mut blob);
        }
    });
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE,
        config: model.config.clone(),
        params,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(PARAMS_FILE);
    fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))
}

/// Rebuild a model from a checkpoint directory alone.
pub fn load<T: Scalar>(dir: &Path) -> Result<SepVit<T>> {
    let manifest = Manifest::read(dir)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            expected: FORMAT_VERSION,
            found: manifest.format_version,
        }
        .into());
    }
    if manifest.dtype != T::DTYPE {
        return Err(CheckpointError::DtypeMismatch {
            expected: T::DTYPE.name().into(),
            found: manifest.dtype.name().into(),
        }
        .into());
    }
    let bpath = dir.join(PARAMS_FILE);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let width = T::DTYPE.size_of();
    let expected = (manifest.total_scalars() * width) as u64;
    let found = blob.len() as u64;
    if found < expected {
        return Err(CheckpointError::Truncated { expected, found }.into());
    }
    if found > expected {
        return Err(CheckpointError::TrailingBytes { extra: found - expected }.into());
    }

    let mut offsets = HashMap::new();
    let mut at = 0;
    for entry in &manifest.params {
        let n: usize = entry.shape.iter().product();
        offsets.insert(entry.name.as_str(), (entry, at));
        at += n * width;
    }

    let mut model = SepVit::<T>::new(&manifest.config, 0)?;
    let mut failure = None;
    let mut seen = 0;
    model.visit_mut(&mut |p| {
        if failure.is_some() {
            return;
        }
        let Some(&(entry, start)) = offsets.get(p.name.as_str()) else {
            failure = Some(CheckpointError::MissingParam(p.name.clone()));
            return;
        };
        if entry.shape != p.value.shape() {
            failure = Some(CheckpointError::ShapeMismatch {
                name: p.name.clone(),
                manifest: entry.shape.clone(),
                model: p.value.shape().to_vec(),
            });
            return;
        }
        let data = blob[start..start + p.numel() * width].chunks_exact(width).map(T::read_le).collect();
        p.value = Tensor::new(entry.shape.clone(), data).expect("length checked");
        seen += 1;
    });
    if let Some(e) = failure {
        return Err(e.into());
    }
    if seen != manifest.params.len() {
        let mut known = std::collections::HashSet::new();
        model.visit(&mut |p| {
            known.insert(p.name.clone());
        });
        let unknown = manifest
            .params
            .iter()
            .find(|e| !known.contains(&e.name))
            .map_or_else(|| "duplicate manifest entry".to_string(), |e| e.name.clone());
        return Err(CheckpointError::UnknownParam(unknown).into());
    }
    Ok(model)
}
