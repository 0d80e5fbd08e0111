use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

/// `manifest.json` of a parameter checkpoint directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub architecture: String,
    pub layer_shapes: Vec<Vec<usize>>,
    pub seed: u64,
    pub training_report: serde_json::Value,
}

/// Writes `manifest.json` plus one little-endian `p{index}.f64` file per tensor.
pub fn save_checkpoint(dir: &Path, manifest: &CheckpointManifest, params: &[Tensor]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, p) in params.iter().enumerate() {
        let bytes: Vec<u8> = p.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        write_atomic(&dir.join(format!("p{i}.f64")), &bytes)?;
    }
    let json = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    write_atomic(&dir.join("manifest.json"), &json)
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, Vec<Tensor>)> {
    let manifest_path = dir.join("manifest.json");
    let raw = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&raw).map_err(|e| Error::json(&manifest_path, e))?;
    let mut params = Vec::with_capacity(manifest.layer_shapes.len());
    for (i, shape) in manifest.layer_shapes.iter().enumerate() {
        let path = dir.join(format!("p{i}.f64"));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = shape.iter().product::<usize>() * 8;
        if bytes.len() != expected {
            return Err(Error::Length {
                path,
                expected,
                found: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.push(Tensor::new(shape.clone(), data)?);
    }
    Ok((manifest, params))
}
