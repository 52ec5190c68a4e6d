//! Detector checkpoints: a JSON descriptor next to a flat little-endian
//! `f32` weight blob. The descriptor records the blob's SHA-256 and the
//! layer table; loading re-checks both.

use std::path::{Path, PathBuf};

use cuap_core::detector::{ArchId, ConvSpec, DetectorModel};
use cuap_core::eval::ModelRole;
use cuap_core::signal::NormRange;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, Result};
use crate::hashing::{sha256_hex, short};
use crate::iqfile::{read_json, write_bytes, write_json};

pub const CHECKPOINT_FORMAT: &str = "cuap-detector/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDescriptor {
    pub format: String,
    pub arch: ArchId,
    pub role: ModelRole,
    pub num_classes: usize,
    pub layers: Vec<ConvSpec>,
    pub weight_count: usize,
    /// File name of the weight blob, next to the descriptor.
    pub weights_file: String,
    pub weights_sha256: String,
    pub norm_range: NormRange,
    pub config_hash: String,
}

pub fn weight_bytes(model: &DetectorModel) -> Vec<u8> {
    model.weights().iter().flat_map(|w| w.to_le_bytes()).collect()
}

/// Writes `<arch>-<role>-<hash>.json` and `.f32` into `dir`; returns the
/// descriptor path.
pub fn save_checkpoint(
    dir: &Path,
    model: &DetectorModel,
    role: ModelRole,
    norm_range: NormRange,
    config_hash: &str,
) -> Result<(PathBuf, CheckpointDescriptor)> {
    let bytes = weight_bytes(model);
    let hash = sha256_hex(&bytes);
    let role_name = match role {
        ModelRole::Victim => "victim",
        ModelRole::Surrogate => "surrogate",
    };
    let stem = format!("{}-{}-{}", model.arch(), role_name, short(&hash));
    let weights_file = format!("{stem}.f32");
    write_bytes(&dir.join(&weights_file), &bytes)?;
    let desc = CheckpointDescriptor {
        format: CHECKPOINT_FORMAT.into(),
        arch: model.arch(),
        role,
        num_classes: model.num_classes(),
        layers: model.layers().to_vec(),
        weight_count: model.weights().len(),
        weights_file,
        weights_sha256: hash,
        norm_range,
        config_hash: config_hash.into(),
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &desc)?;
    Ok((path, desc))
}

pub fn load_checkpoint(path: &Path) -> Result<(DetectorModel, CheckpointDescriptor)> {
    let desc: CheckpointDescriptor = read_json(path)?;
    if desc.format != CHECKPOINT_FORMAT {
        return Err(format_err(path, format!("unknown checkpoint format `{}`", desc.format)));
    }
    let expected = desc.arch.layers(desc.num_classes);
    if desc.layers != expected {
        return Err(format_err(path, format!("layer table does not match architecture {}", desc.arch)));
    }
    let params: usize = desc.layers.iter().map(ConvSpec::param_count).sum();
    if params != desc.weight_count {
        return Err(format_err(
            path,
            format!("layers need {params} parameters but the descriptor lists {}", desc.weight_count),
        ));
    }
    let blob_path = path.with_file_name(&desc.weights_file);
    let bytes = std::fs::read(&blob_path).map_err(io_err(&blob_path))?;
    if bytes.len() != desc.weight_count * 4 {
        return Err(format_err(
            &blob_path,
            format!("{} bytes, expected {} f32 weights", bytes.len(), desc.weight_count),
        ));
    }
    let hash = sha256_hex(&bytes);
    if hash != desc.weights_sha256 {
        return Err(format_err(&blob_path, format!("content hash {hash} does not match the descriptor")));
    }
    let weights = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let model = DetectorModel::from_weights(desc.arch, desc.num_classes, weights).map_err(|e| format_err(path, e))?;
    Ok((model, desc))
}
