//! Synthetic multi-emitter scenes with exact ground truth.
//!
//! Emitters transmit periodic bursts of band-limited baseband signal; scenes
//! mix several emitters at distinct carrier offsets and add white noise.
//! Burst extents are known exactly and mapped onto spectrogram boxes.

mod energy;
mod plan;
mod synth;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::Rect;

pub use energy::{energy_detect_annotate, EnergyDetectorConfig};
pub use plan::{
    default_profiles, plan_dataset, split_counts, DatasetConfig, DatasetKind, ScenePlan, SplitSpec,
};
pub use synth::{
    add_awgn, add_noise_power, apply_cfo, mix_scene, synth_emitter, BurstExtent, EmitterPlacement,
};

/// Samples per scene: exactly one 1024 x 1024 spectrogram.
pub const SCENE_LEN: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralShape {
    FlatNoise,
    OfdmLike,
    Chirp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterProfile {
    pub class_id: usize,
    pub bandwidth_hz: f64,
    pub burst_duration_s: f64,
    pub burst_period_s: f64,
    pub spectral_shape: SpectralShape,
    pub power_scale: f64,
}

impl EmitterProfile {
    pub fn validate(&self, sample_rate_hz: f64) -> crate::Result<()> {
        use crate::error::ensure;
        ensure!(
            self.bandwidth_hz > 0.0 && self.bandwidth_hz < sample_rate_hz / 2.0,
            "class {}: bandwidth {} Hz must lie in (0, {}) Hz",
            self.class_id,
            self.bandwidth_hz,
            sample_rate_hz / 2.0
        );
        ensure!(
            self.burst_duration_s > 0.0 && self.burst_duration_s <= self.burst_period_s,
            "class {}: burst duration {} s must be positive and at most the period {} s",
            self.class_id,
            self.burst_duration_s,
            self.burst_period_s
        );
        ensure!(
            self.power_scale > 0.0 && self.power_scale.is_finite(),
            "class {}: power scale must be positive",
            self.class_id
        );
        Ok(())
    }
}

/// Ground-truth box in spectrogram bins; all bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundTruthBox {
    #[serde(rename = "class")]
    pub class_id: usize,
    pub f_lo: usize,
    pub f_hi: usize,
    pub t_lo: usize,
    pub t_hi: usize,
}

impl GroundTruthBox {
    /// Pixel rectangle covering the inclusive bin ranges.
    pub fn rect(&self) -> Rect {
        Rect::new(self.t_lo as f64, self.f_lo as f64, (self.t_hi + 1) as f64, (self.f_hi + 1) as f64)
    }

    pub fn is_valid(&self, f_bins: usize, t_frames: usize, num_classes: usize) -> bool {
        self.f_lo < self.f_hi
            && self.t_lo < self.t_hi
            && self.f_hi < f_bins
            && self.t_hi < t_frames
            && self.class_id < num_classes
    }
}

/// How a scene was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneProvenance {
    pub placements: Vec<EmitterPlacement>,
    pub snr_db: Option<f64>,
    pub sample_rate_hz: f64,
    pub len_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub iq: crate::signal::IqBuffer,
    pub boxes: Vec<GroundTruthBox>,
    pub seed: u64,
    pub provenance: SceneProvenance,
}

/// I/Q with its annotations, as consumed by attack training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub iq: crate::signal::IqBuffer,
    pub boxes: Vec<GroundTruthBox>,
}

impl From<SceneRecord> for LabeledScene {
    fn from(r: SceneRecord) -> Self {
        Self { iq: r.iq, boxes: r.boxes }
    }
}
