//! Perturbation artifacts: the tile as a cf32 I/Q file, a sidecar with the
//! budget and provenance hashes, and the per-iteration training log.

use std::path::{Path, PathBuf};

use cuap_core::attack::IterLog;
use cuap_core::eval::{ModelKey, ScenarioKind};
use cuap_core::signal::{CuapTile, IqBuffer, TILE_LEN};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, Result};
use crate::hashing::{sha256_hex, short};
use crate::iqfile::{encode_cf32, read_iq, sidecar_path, write_bytes, write_json, IqMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuapSidecar {
    #[serde(flatten)]
    pub iq: IqMeta,
    pub spr_budget_db: f64,
    pub target_class: usize,
    pub config_hash: String,
    pub scenario: ScenarioKind,
    /// `None` for closed-set tiles, which serve every victim.
    pub eval_model: Option<ModelKey>,
    pub models: Vec<ModelKey>,
    /// Weight hashes of `models`, in the same order.
    pub model_hashes: Vec<String>,
    pub iterations: usize,
    pub reference_power: f64,
    pub samples_sha256: String,
}

#[derive(Debug, Serialize)]
struct LogRow {
    iter: usize,
    evade: f64,
    protect: f64,
    total: f64,
    spr_db: f64,
    val_target_ap: Option<f64>,
}

pub fn write_log_csv(path: &Path, log: &[IterLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for l in log {
        w.serialize(LogRow {
            iter: l.iter,
            evade: l.evade,
            protect: l.protect,
            total: l.total,
            spr_db: l.spr_db,
            val_target_ap: l.val_target_ap,
        })
        .map_err(|e| format_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| format_err(path, e.to_string()))?;
    write_bytes(path, &bytes)
}

/// Writes `<stem>-<hash>.cf32`, its `.meta.json` sidecar and `.log.csv`.
/// The sidecar's `samples_sha256` and `iq` fields are filled in here.
pub fn save_cuap(
    dir: &Path,
    stem: &str,
    tile: &CuapTile,
    mut sidecar: CuapSidecar,
    log: &[IterLog],
) -> Result<(PathBuf, CuapSidecar)> {
    let bytes = encode_cf32(tile.samples());
    let hash = sha256_hex(&bytes);
    let name = format!("{stem}-{}", short(&hash));
    let path = dir.join(format!("{name}.cf32"));
    write_bytes(&path, &bytes)?;
    sidecar.samples_sha256 = hash;
    sidecar.iq.length_samples = tile.samples().len();
    write_json(&sidecar_path(&path), &sidecar)?;
    write_log_csv(&dir.join(format!("{name}.log.csv")), log)?;
    Ok((path, sidecar))
}

pub fn load_cuap(path: &Path) -> Result<(CuapTile, CuapSidecar)> {
    let sidecar: CuapSidecar = crate::iqfile::read_json(&sidecar_path(path))?;
    let (iq, _): (IqBuffer, _) = read_iq(path)?;
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if sha256_hex(&bytes) != sidecar.samples_sha256 {
        return Err(format_err(path, "content hash does not match the sidecar"));
    }
    if iq.len() != TILE_LEN {
        return Err(format_err(path, format!("a tile has {TILE_LEN} samples, found {}", iq.len())));
    }
    if sidecar.models.len() != sidecar.model_hashes.len() {
        return Err(format_err(path, "sidecar lists a different number of models and hashes"));
    }
    let tile = CuapTile::new(iq.into_samples(), sidecar.spr_budget_db).map_err(|e| format_err(path, e))?;
    Ok((tile, sidecar))
}
