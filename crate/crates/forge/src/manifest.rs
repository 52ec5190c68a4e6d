//! Dataset manifest: one JSON file listing every scene with its split and
//! ground-truth boxes.

use std::path::{Path, PathBuf};

use cuap_core::scene::{GroundTruthBox, LabeledScene};
use cuap_core::signal::NormRange;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, Result};
use crate::iqfile::{read_iq, read_json};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub split: String,
    pub boxes: Vec<GroundTruthBox>,
    pub snr_db: f64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub classes: Vec<String>,
    pub norm_range: NormRange,
    pub config_hash: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = read_json(path)?;
        if m.version != MANIFEST_VERSION {
            return Err(format_err(path, format!("unsupported manifest version {}", m.version)));
        }
        m.norm_range.validate().map_err(|e| format_err(path, e))?;
        for (i, e) in m.entries.iter().enumerate() {
            if let Some(b) = e.boxes.iter().find(|b| b.class_id >= m.classes.len()) {
                return Err(format_err(path, format!("entry {i}: box class {} is out of range", b.class_id)));
            }
        }
        Ok(m)
    }

    pub fn split<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries.iter().filter(move |e| e.split == name)
    }

    pub fn count(&self, split: &str) -> usize {
        self.split(split).count()
    }
}

/// Loads every scene of one split, in manifest order.
pub fn load_split(manifest: &Manifest, dir: &Path, split: &str) -> Result<Vec<LabeledScene>> {
    manifest
        .split(split)
        .map(|e| {
            let path: PathBuf = dir.join(&e.path);
            let (iq, _) = read_iq(&path)?;
            Ok(LabeledScene { iq, boxes: e.boxes.clone() })
        })
        .collect()
}
