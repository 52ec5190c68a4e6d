//! Declarative experiment configuration (TOML).
//!
//! Every section has defaults, so an empty file is a valid config. Unknown
//! keys are rejected. A single master `seed` feeds every stochastic stage
//! through derived streams.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use cuap_core::attack::AttackConfig;
use cuap_core::detector::{ArchId, TrainHyper};
use cuap_core::eval::{ModelKey, ModelRole, OtaChannel, ScenarioKind};
use cuap_core::rng::Seed;
use cuap_core::scene::{
    default_profiles, DatasetConfig, DatasetKind, EmitterProfile, SpectralShape, SplitSpec, SCENE_LEN,
};
use cuap_core::signal::{RangeMode, DEFAULT_SAMPLE_RATE_HZ};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, ForgeError, Result};

const ATTACK_DATA_STREAM: u64 = 1;
const DETECTOR_STREAM: u64 = 2;
const ATTACK_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output root; the command line and `CUAP_FORGE_OUT` take precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_seed() -> u64 {
    7
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out_dir: None,
            seed: default_seed(),
            dataset: DatasetSection::default(),
            detector: DetectorSection::default(),
            attack: AttackSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub bandwidth_hz: f64,
    pub burst_duration_s: f64,
    pub burst_period_s: f64,
    pub shape: SpectralShape,
    #[serde(default = "one")]
    pub power_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub classes: Vec<ClassSpec>,
    /// Scenes for detector training and testing.
    pub detector_scenes: usize,
    /// Must provide `target`, `surrogate` and `test`.
    pub detector_splits: Vec<SplitSpec>,
    /// Scenes for perturbation training, all containing the target class.
    pub attack_scenes: usize,
    /// Must provide `train`, `val` and `test`.
    pub attack_splits: Vec<SplitSpec>,
    pub snr_db: Vec<f64>,
    pub presence_probability: f64,
    /// Fixed carrier offset of the target emitter in attack scenes.
    pub target_cfo_hz: f64,
    pub sample_rate_hz: f64,
    /// dB normalization range, fitted to detector training scenes.
    pub range: RangeMode,
    /// Every n-th dB value feeds the range estimate.
    pub range_stride: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let names = ["burst-noise", "ofdm-wide", "chirp", "ofdm-narrow"];
        let classes = default_profiles()
            .into_iter()
            .zip(names)
            .map(|(p, name)| ClassSpec {
                name: name.into(),
                bandwidth_hz: p.bandwidth_hz,
                burst_duration_s: p.burst_duration_s,
                burst_period_s: p.burst_period_s,
                shape: p.spectral_shape,
                power_scale: p.power_scale,
            })
            .collect();
        Self {
            classes,
            detector_scenes: 120,
            detector_splits: SplitSpec::detector(),
            attack_scenes: 60,
            attack_splits: SplitSpec::attack(),
            snr_db: vec![10.0, 15.0, 20.0, 25.0],
            presence_probability: 0.85,
            target_cfo_hz: -1.5e6,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            range: RangeMode::Percentile { low: 1.0, high: 99.9 },
            range_stride: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub archs: Vec<ArchId>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let h = TrainHyper::default();
        Self {
            archs: ArchId::ALL.to_vec(),
            epochs: h.epochs,
            batch_size: h.batch_size,
            learning_rate: h.learning_rate,
            momentum: h.momentum,
            weight_decay: h.weight_decay,
            grad_clip: h.grad_clip.unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub target_class: usize,
    pub lambda: f64,
    pub tau: f64,
    pub min_spr_db: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub init_margin_db: f64,
    pub val_every: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            target_class: a.target_class,
            lambda: a.lambda,
            tau: a.tau,
            min_spr_db: a.min_spr_db,
            learning_rate: a.learning_rate,
            iterations: a.iterations,
            batch_size: a.batch_size,
            init_margin_db: a.init_margin_db,
            val_every: a.val_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub scenarios: Vec<ScenarioKind>,
    /// Budgets for the SPR sweep, weakest perturbation first.
    pub sweep_spr_db: Vec<f64>,
    /// Architecture used by default for single-model runs (sweep, OTA).
    pub focus_arch: ArchId,
    /// Fixed tiling offsets for the shift-invariance check.
    pub shift_offsets: usize,
    pub channel: OtaChannel,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            scenarios: ScenarioKind::ALL.to_vec(),
            sweep_spr_db: vec![20.0, 15.0, 10.0],
            focus_arch: ArchId::A,
            shift_offsets: 16,
            channel: OtaChannel::default(),
        }
    }
}

fn bad(msg: impl Into<String>) -> ForgeError {
    ForgeError::Config(msg.into())
}

fn check_splits(field: &str, splits: &[SplitSpec], required: &[&str]) -> Result<()> {
    let names: BTreeSet<&str> = splits.iter().map(|s| s.name.as_str()).collect();
    if names.len() != splits.len() {
        return Err(bad(format!("{field}: split names must be unique")));
    }
    for r in required {
        if !names.contains(r) {
            return Err(bad(format!("{field}: missing required split `{r}`")));
        }
    }
    if let Some(s) = splits.iter().find(|s| !(s.fraction >= 0.0)) {
        return Err(bad(format!("{field}: split `{}` has negative fraction {}", s.name, s.fraction)));
    }
    let sum: f64 = splits.iter().map(|s| s.fraction).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(bad(format!("{field}: fractions sum to {sum}, expected 1")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ForgeError::Config(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.classes.is_empty() {
            return Err(bad("dataset.classes: at least one class is required"));
        }
        let names: BTreeSet<&str> = d.classes.iter().map(|c| c.name.as_str()).collect();
        if names.len() != d.classes.len() {
            return Err(bad("dataset.classes: class names must be unique"));
        }
        for (i, p) in self.profiles().iter().enumerate() {
            p.validate(d.sample_rate_hz).map_err(|e| bad(format!("dataset.classes[{i}]: {e}")))?;
        }
        if d.detector_scenes == 0 {
            return Err(bad("dataset.detector_scenes: must be at least 1"));
        }
        if d.attack_scenes == 0 {
            return Err(bad("dataset.attack_scenes: must be at least 1"));
        }
        check_splits("dataset.detector_splits", &d.detector_splits, &["target", "surrogate", "test"])?;
        check_splits("dataset.attack_splits", &d.attack_splits, &["train", "val", "test"])?;
        if d.range_stride == 0 {
            return Err(bad("dataset.range_stride: must be at least 1"));
        }
        if self.attack.target_class >= d.classes.len() {
            return Err(bad(format!(
                "attack.target_class: {} is outside the {} configured classes",
                self.attack.target_class,
                d.classes.len()
            )));
        }
        self.detector_dataset().validate().map_err(|e| bad(format!("dataset: {e}")))?;
        self.attack_dataset().validate().map_err(|e| bad(format!("dataset: {e}")))?;

        let det = &self.detector;
        if det.archs.is_empty() {
            return Err(bad("detector.archs: at least one architecture is required"));
        }
        if det.archs.iter().collect::<BTreeSet<_>>().len() != det.archs.len() {
            return Err(bad("detector.archs: architectures must be unique"));
        }
        if det.grad_clip < 0.0 {
            return Err(bad("detector.grad_clip: must be non-negative"));
        }
        self.train_hyper(ModelKey::victim(det.archs[0]))
            .validate()
            .map_err(|e| bad(format!("detector: {e}")))?;

        self.attack_config(ScenarioKind::WhiteBox, det.archs[0], self.attack.min_spr_db)
            .validate()
            .map_err(|e| bad(format!("attack: {e}")))?;

        let e = &self.eval;
        if e.scenarios.is_empty() {
            return Err(bad("eval.scenarios: at least one scenario is required"));
        }
        if e.sweep_spr_db.is_empty() || !e.sweep_spr_db.windows(2).all(|w| w[0] > w[1]) {
            return Err(bad("eval.sweep_spr_db: levels must be non-empty and strictly descending"));
        }
        if !det.archs.contains(&e.focus_arch) {
            return Err(bad(format!("eval.focus_arch: {} is not listed in detector.archs", e.focus_arch)));
        }
        if e.shift_offsets == 0 {
            return Err(bad("eval.shift_offsets: must be at least 1"));
        }
        if !(e.channel.cfo_max_hz >= 0.0) || !e.channel.cfo_max_hz.is_finite() {
            return Err(bad("eval.channel.cfo_max_hz: must be finite and non-negative"));
        }
        Ok(())
    }

    /// Hash of everything that determines artifact contents.
    pub fn config_hash(&self) -> String {
        crate::hashing::json_hash(&Self { out_dir: None, ..self.clone() })
    }

    pub fn class_names(&self) -> Vec<String> {
        self.dataset.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.dataset.classes.len()
    }

    pub fn profiles(&self) -> Vec<EmitterProfile> {
        self.dataset
            .classes
            .iter()
            .enumerate()
            .map(|(class_id, c)| EmitterProfile {
                class_id,
                bandwidth_hz: c.bandwidth_hz,
                burst_duration_s: c.burst_duration_s,
                burst_period_s: c.burst_period_s,
                spectral_shape: c.shape,
                power_scale: c.power_scale,
            })
            .collect()
    }

    pub fn detector_dataset(&self) -> DatasetConfig {
        let d = &self.dataset;
        DatasetConfig {
            profiles: self.profiles(),
            scenes: d.detector_scenes,
            splits: d.detector_splits.clone(),
            snr_grid_db: d.snr_db.clone(),
            presence_probability: d.presence_probability,
            sample_rate_hz: d.sample_rate_hz,
            scene_len: SCENE_LEN,
            ..DatasetConfig::detector_default(d.detector_scenes, self.seed)
        }
    }

    pub fn attack_dataset(&self) -> DatasetConfig {
        let d = &self.dataset;
        DatasetConfig {
            scenes: d.attack_scenes,
            splits: d.attack_splits.clone(),
            kind: DatasetKind::Attack { target_class: self.attack.target_class, target_cfo_hz: d.target_cfo_hz },
            seed: Seed(self.seed).derive(ATTACK_DATA_STREAM).0,
            ..self.detector_dataset()
        }
    }

    pub fn train_hyper(&self, key: ModelKey) -> TrainHyper {
        let d = &self.detector;
        let role = match key.role {
            ModelRole::Victim => 0,
            ModelRole::Surrogate => 1,
        };
        TrainHyper {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            grad_clip: (d.grad_clip > 0.0).then_some(d.grad_clip),
            seed: Seed(self.seed).derive(DETECTOR_STREAM).derive2(key.arch.base_width() as u64, role),
        }
    }

    pub fn attack_config(&self, scenario: ScenarioKind, arch: ArchId, spr_db: f64) -> AttackConfig {
        let a = &self.attack;
        let scenario_id = ScenarioKind::ALL.iter().position(|&s| s == scenario).unwrap_or(0) as u64;
        AttackConfig {
            target_class: a.target_class,
            lambda: a.lambda,
            tau: a.tau,
            min_spr_db: spr_db,
            learning_rate: a.learning_rate,
            iterations: a.iterations,
            batch_size: a.batch_size,
            init_margin_db: a.init_margin_db,
            val_every: a.val_every,
            seed: Seed(self.seed)
                .derive(ATTACK_STREAM)
                .derive2(scenario_id, arch.base_width() as u64)
                .derive(spr_db.to_bits()),
        }
    }

    pub fn eval_seed(&self) -> Seed {
        Seed(self.seed).derive(EVAL_STREAM)
    }
}
