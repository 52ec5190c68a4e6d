use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{mix_scene, EmitterPlacement, EmitterProfile, SceneRecord, SpectralShape, SCENE_LEN};
use crate::error::{ensure, invalid, Result};
use crate::rng::Seed;
use crate::signal::DEFAULT_SAMPLE_RATE_HZ;

/// Four synthetic emitter classes with distinct band/burst geometry.
pub fn default_profiles() -> Vec<EmitterProfile> {
    let p = |class_id, bw: f64, burst: f64, period: f64, shape| EmitterProfile {
        class_id,
        bandwidth_hz: bw,
        burst_duration_s: burst,
        burst_period_s: period,
        spectral_shape: shape,
        power_scale: 1.0,
    };
    alloc::vec![
        p(0, 1.0e6, 5.0e-3, 14.0e-3, SpectralShape::FlatNoise),
        p(1, 2.0e6, 2.4e-3, 9.0e-3, SpectralShape::OfdmLike),
        p(2, 1.4e6, 8.0e-3, 20.0e-3, SpectralShape::Chirp),
        p(3, 0.6e6, 10.0e-3, 18.0e-3, SpectralShape::OfdmLike),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub fraction: f64,
}

impl SplitSpec {
    pub fn new(name: &str, fraction: f64) -> Self {
        Self { name: name.to_string(), fraction }
    }

    /// Detector data: target / surrogate / test at 40 / 40 / 20.
    pub fn detector() -> Vec<SplitSpec> {
        alloc::vec![Self::new("target", 0.4), Self::new("surrogate", 0.4), Self::new("test", 0.2)]
    }

    /// Attack data: train / val / test at 70 / 15 / 15.
    pub fn attack() -> Vec<SplitSpec> {
        alloc::vec![Self::new("train", 0.7), Self::new("val", 0.15), Self::new("test", 0.15)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    /// Every emitter at a random carrier offset.
    Detector,
    /// The target class always present at a fixed carrier offset, the
    /// others at random offsets.
    Attack { target_class: usize, target_cfo_hz: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub profiles: Vec<EmitterProfile>,
    pub scenes: usize,
    pub splits: Vec<SplitSpec>,
    pub kind: DatasetKind,
    pub snr_grid_db: Vec<f64>,
    pub presence_probability: f64,
    pub sample_rate_hz: f64,
    pub scene_len: usize,
    pub guard_hz: f64,
    pub edge_margin_hz: f64,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn detector_default(scenes: usize, seed: u64) -> Self {
        Self {
            profiles: default_profiles(),
            scenes,
            splits: SplitSpec::detector(),
            kind: DatasetKind::Detector,
            snr_grid_db: alloc::vec![10.0, 15.0, 20.0, 25.0],
            presence_probability: 0.85,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            scene_len: SCENE_LEN,
            guard_hz: 0.25e6,
            edge_margin_hz: 0.3e6,
            seed,
        }
    }

    pub fn attack_default(scenes: usize, target_class: usize, seed: u64) -> Self {
        Self {
            splits: SplitSpec::attack(),
            kind: DatasetKind::Attack { target_class, target_cfo_hz: -1.5e6 },
            ..Self::detector_default(scenes, seed)
        }
    }

    pub fn num_classes(&self) -> usize {
        self.profiles.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.profiles.is_empty(), "profiles: at least one emitter class is required");
        for (i, p) in self.profiles.iter().enumerate() {
            ensure!(p.class_id == i, "profiles: entry {} has class_id {}, expected {}", i, p.class_id, i);
            p.validate(self.sample_rate_hz)?;
        }
        ensure!(self.scenes >= 1, "scenes: must be at least 1");
        ensure!(!self.splits.is_empty(), "splits: at least one split is required");
        let sum: f64 = self.splits.iter().map(|s| s.fraction).sum();
        ensure!(
            (sum - 1.0).abs() < 1e-9 && self.splits.iter().all(|s| s.fraction >= 0.0),
            "splits: fractions sum to {}, expected 1",
            sum
        );
        ensure!(!self.snr_grid_db.is_empty(), "snr_grid_db: at least one SNR level is required");
        ensure!(
            (0.0..=1.0).contains(&self.presence_probability),
            "presence_probability: {} outside [0, 1]",
            self.presence_probability
        );
        ensure!(
            self.scene_len >= crate::signal::N_FFT,
            "scene_len: {} is shorter than one frame",
            self.scene_len
        );
        if let DatasetKind::Attack { target_class, target_cfo_hz } = self.kind {
            let p = self
                .profiles
                .get(target_class)
                .ok_or_else(|| invalid!("kind.target_class: {} is not a known class", target_class))?;
            ensure!(
                target_cfo_hz.abs() + p.bandwidth_hz / 2.0 + self.edge_margin_hz < self.sample_rate_hz / 2.0,
                "kind.target_cfo_hz: {} Hz leaves the usable band",
                target_cfo_hz
            );
        }
        Ok(())
    }
}

/// Per-split scene counts: floors of `fraction * n`, remainder handed out by
/// largest fractional part (earlier split on ties).
pub fn split_counts(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| libm::floor(r + 1e-9) as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - counts[a] as f64;
        let fb = raw[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Everything needed to render one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePlan {
    pub index: usize,
    pub split: String,
    pub placements: Vec<EmitterPlacement>,
    pub snr_db: f64,
    pub seed: Seed,
}

impl ScenePlan {
    pub fn render(&self, config: &DatasetConfig) -> Result<SceneRecord> {
        mix_scene(&self.placements, config.scene_len, config.sample_rate_hz, Some(self.snr_db), self.seed)
    }
}

const PLAN_STREAM: u64 = 11;
const RENDER_STREAM: u64 = 12;
const SPLIT_STREAM: u64 = 13;

fn sample_offset(p: &EmitterProfile, config: &DatasetConfig, rng: &mut impl Rng) -> usize {
    let fs = config.sample_rate_hz;
    let burst = libm::round(p.burst_duration_s * fs) as usize;
    let period = (libm::round(p.burst_period_s * fs) as usize).max(1);
    let latest = config.scene_len.saturating_sub(burst).min(period - 1);
    rng.random_range(0..=latest)
}

fn place_scene(config: &DatasetConfig, index: usize) -> Vec<EmitterPlacement> {
    let mut rng = Seed(config.seed).derive2(index as u64, PLAN_STREAM).rng();
    let fs = config.sample_rate_hz;
    let mut placements: Vec<EmitterPlacement> = Vec::new();
    let fits = |placements: &[EmitterPlacement], p: &EmitterProfile, cfo: f64| {
        placements.iter().all(|q| {
            (q.cfo_hz - cfo).abs() >= (q.profile.bandwidth_hz + p.bandwidth_hz) / 2.0 + config.guard_hz
        })
    };

    let forced = match config.kind {
        DatasetKind::Attack { target_class, target_cfo_hz } => {
            let p = config.profiles[target_class];
            placements.push(EmitterPlacement {
                profile: p,
                cfo_hz: target_cfo_hz,
                start_offset: sample_offset(&p, config, &mut rng),
            });
            Some(target_class)
        }
        DatasetKind::Detector => None,
    };

    let mut present: Vec<usize> = (0..config.profiles.len())
        .filter(|&c| Some(c) != forced)
        .filter(|_| rng.random::<f64>() < config.presence_probability)
        .collect();
    if present.is_empty() && forced.is_none() {
        present.push(rng.random_range(0..config.profiles.len()));
    }
    present.shuffle(&mut rng);
    for c in present {
        let p = config.profiles[c];
        let reach = fs / 2.0 - config.edge_margin_hz - p.bandwidth_hz / 2.0;
        if reach <= 0.0 {
            continue;
        }
        for _ in 0..200 {
            let cfo = rng.random_range(-reach..reach);
            if fits(&placements, &p, cfo) {
                placements.push(EmitterPlacement {
                    profile: p,
                    cfo_hz: cfo,
                    start_offset: sample_offset(&p, config, &mut rng),
                });
                break;
            }
        }
    }
    placements
}

/// Draws every scene's emitters, noise level and split assignment.
pub fn plan_dataset(config: &DatasetConfig) -> Result<Vec<ScenePlan>> {
    config.validate()?;
    let fractions: Vec<f64> = config.splits.iter().map(|s| s.fraction).collect();
    let counts = split_counts(config.scenes, &fractions);
    let mut order: Vec<usize> = (0..config.scenes).collect();
    order.shuffle(&mut Seed(config.seed).derive(SPLIT_STREAM).rng());
    let mut split_of = alloc::vec![0usize; config.scenes];
    let mut cursor = 0;
    for (s, &count) in counts.iter().enumerate() {
        for &scene in &order[cursor..cursor + count] {
            split_of[scene] = s;
        }
        cursor += count;
    }

    let mut plans = Vec::with_capacity(config.scenes);
    for index in 0..config.scenes {
        let placements = place_scene(config, index);
        ensure!(!placements.is_empty(), "scene {}: no emitter could be placed", index);
        let mut rng = Seed(config.seed).derive2(index as u64, PLAN_STREAM + 100).rng();
        let snr_db = config.snr_grid_db[rng.random_range(0..config.snr_grid_db.len())];
        plans.push(ScenePlan {
            index,
            split: config.splits[split_of[index]].name.clone(),
            placements,
            snr_db,
            seed: Seed(config.seed).derive2(index as u64, RENDER_STREAM),
        });
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_are_exact() {
        assert_eq!(split_counts(100, &[0.4, 0.4, 0.2]), alloc::vec![40, 40, 20]);
        assert_eq!(split_counts(20, &[0.7, 0.15, 0.15]), alloc::vec![14, 3, 3]);
        assert_eq!(split_counts(7, &[0.4, 0.4, 0.2]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn plan_is_deterministic_and_respects_splits() {
        let cfg = DatasetConfig::detector_default(100, 3);
        let a = plan_dataset(&cfg).unwrap();
        assert_eq!(a, plan_dataset(&cfg).unwrap());
        let count = |name: &str| a.iter().filter(|p| p.split == name).count();
        assert_eq!((count("target"), count("surrogate"), count("test")), (40, 40, 20));
        for plan in &a {
            for (i, p) in plan.placements.iter().enumerate() {
                for q in &plan.placements[i + 1..] {
                    assert!((p.cfo_hz - q.cfo_hz).abs() >= (p.profile.bandwidth_hz + q.profile.bandwidth_hz) / 2.0);
                }
            }
        }
    }

    #[test]
    fn invalid_split_sum_names_the_field() {
        let mut cfg = DatasetConfig::detector_default(10, 3);
        cfg.splits[0].fraction = 0.5;
        let err = plan_dataset(&cfg).unwrap_err();
        assert!(alloc::format!("{}", err).contains("splits"));
    }

    #[test]
    fn attack_plans_pin_the_target_channel() {
        let cfg = DatasetConfig::attack_default(20, 0, 5);
        for plan in plan_dataset(&cfg).unwrap() {
            let target: Vec<_> = plan.placements.iter().filter(|p| p.profile.class_id == 0).collect();
            assert_eq!(target.len(), 1);
            assert_eq!(target[0].cfo_hz, -1.5e6);
        }
    }
}
