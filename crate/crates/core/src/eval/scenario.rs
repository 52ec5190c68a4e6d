use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{mdr, ApReport, MdrEntry, DEFAULT_MATCH_IOU};
use crate::attack::{apply_attack, train_cuap, AttackConfig, AttackProblem, IterLog};
use crate::detector::{nms, ArchId, Detection, DetectorModel, DEFAULT_CONF_THRESHOLD, DEFAULT_IOU_THRESHOLD};
use crate::error::{ensure, Result};
use crate::rng::Seed;
use crate::scene::{add_noise_power, apply_cfo, LabeledScene};
use crate::signal::{tile_perturbation, mix, CuapTile, IqBuffer, SpectrogramPipeline, TILE_LEN};

/// Thresholded, suppressed detections for one I/Q scene.
pub fn detect(pipeline: &SpectrogramPipeline, model: &DetectorModel, iq: &IqBuffer) -> Result<Vec<Detection>> {
    let input = pipeline.spectrogram(iq)?.to_pseudo_rgb::<f32>();
    Ok(nms(&model.forward(&input)?, DEFAULT_CONF_THRESHOLD, DEFAULT_IOU_THRESHOLD))
}

/// One uniform tiling offset per scene.
pub fn eval_offsets(n: usize, seed: Seed) -> Vec<usize> {
    let mut rng = seed.rng();
    (0..n).map(|_| rng.random_range(0..TILE_LEN)).collect()
}

/// What is done to a clean scene before detection.
#[derive(Debug, Clone, Copy)]
pub enum Condition<'a> {
    Clean,
    /// Additive white Gaussian noise of a fixed per-sample power, seeded
    /// per scene.
    Awgn { noise_power: f64, seed: Seed },
    /// The tile repeated from a per-scene offset.
    Attacked { tile: &'a CuapTile, offsets: &'a [usize] },
}

impl Condition<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Awgn { .. } => "awgn",
            Condition::Attacked { .. } => "attacked",
        }
    }

    /// The received I/Q for scene `index`.
    pub fn apply(&self, index: usize, scene: &LabeledScene) -> Result<IqBuffer> {
        match *self {
            Condition::Clean => Ok(scene.iq.clone()),
            Condition::Awgn { noise_power, seed } => add_noise_power(&scene.iq, noise_power, seed.derive(index as u64)),
            Condition::Attacked { tile, offsets } => {
                ensure!(index < offsets.len(), "no tiling offset for scene {}", index);
                apply_attack(&scene.iq, tile, offsets[index])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub target_ap: Option<f64>,
    pub non_target_map: Option<f64>,
    pub report: ApReport,
}

impl ConditionMetrics {
    pub fn from_detections(
        dets: &[Vec<Detection>],
        scenes: &[LabeledScene],
        num_classes: usize,
        target_class: usize,
    ) -> Self {
        let gts: Vec<_> = scenes.iter().map(|s| s.boxes.clone()).collect();
        let report = ApReport::evaluate(dets, &gts, num_classes, DEFAULT_MATCH_IOU);
        Self { target_ap: report.ap(target_class), non_target_map: report.non_target_map(target_class), report }
    }
}

pub fn detect_condition(
    pipeline: &SpectrogramPipeline,
    model: &DetectorModel,
    scenes: &[LabeledScene],
    condition: &Condition<'_>,
) -> Result<Vec<Vec<Detection>>> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| detect(pipeline, model, &condition.apply(i, s)?))
        .collect()
}

pub fn evaluate_condition(
    pipeline: &SpectrogramPipeline,
    model: &DetectorModel,
    scenes: &[LabeledScene],
    condition: &Condition<'_>,
    target_class: usize,
) -> Result<ConditionMetrics> {
    let dets = detect_condition(pipeline, model, scenes, condition)?;
    Ok(ConditionMetrics::from_detections(&dets, scenes, model.num_classes(), target_class))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// The tile is trained on the evaluated model itself.
    #[serde(rename = "WB")]
    WhiteBox,
    /// Trained on a same-architecture surrogate fitted to disjoint data.
    #[serde(rename = "GB")]
    GrayBox,
    /// Trained jointly on every surrogate.
    #[serde(rename = "CS")]
    ClosedSet,
    /// Trained on the surrogates of every other architecture.
    #[serde(rename = "BB")]
    BlackBox,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] =
        [ScenarioKind::WhiteBox, ScenarioKind::GrayBox, ScenarioKind::ClosedSet, ScenarioKind::BlackBox];

    pub fn code(self) -> &'static str {
        match self {
            ScenarioKind::WhiteBox => "WB",
            ScenarioKind::GrayBox => "GB",
            ScenarioKind::ClosedSet => "CS",
            ScenarioKind::BlackBox => "BB",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code().eq_ignore_ascii_case(s))
    }
}

/// Which data split a detector was fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Victim,
    Surrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelKey {
    pub arch: ArchId,
    pub role: ModelRole,
}

impl ModelKey {
    pub fn victim(arch: ArchId) -> Self {
        Self { arch, role: ModelRole::Victim }
    }

    pub fn surrogate(arch: ArchId) -> Self {
        Self { arch, role: ModelRole::Surrogate }
    }
}

impl core::fmt::Display for ModelKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self.role {
            ModelRole::Victim => write!(f, "{}", self.arch),
            ModelRole::Surrogate => write!(f, "{}-surrogate", self.arch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub eval_model: ModelKey,
    pub train_models: Vec<ModelKey>,
}

impl ScenarioSpec {
    /// Attacker model set for evaluating the victim of `eval_arch` within
    /// the architecture family `family`.
    pub fn new(kind: ScenarioKind, eval_arch: ArchId, family: &[ArchId]) -> Result<Self> {
        ensure!(family.contains(&eval_arch), "architecture {} is not in the model family", eval_arch);
        let train_models = match kind {
            ScenarioKind::WhiteBox => alloc::vec![ModelKey::victim(eval_arch)],
            ScenarioKind::GrayBox => alloc::vec![ModelKey::surrogate(eval_arch)],
            ScenarioKind::ClosedSet => family.iter().map(|&a| ModelKey::surrogate(a)).collect(),
            ScenarioKind::BlackBox => {
                family.iter().filter(|&&a| a != eval_arch).map(|&a| ModelKey::surrogate(a)).collect()
            }
        };
        let spec = Self { kind, eval_model: ModelKey::victim(eval_arch), train_models };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.train_models.is_empty(), "{} scenario has no attacker models", self.kind.code());
        match self.kind {
            ScenarioKind::WhiteBox => ensure!(
                self.train_models == [self.eval_model],
                "white-box attacks train on the evaluated model only"
            ),
            ScenarioKind::GrayBox => ensure!(
                self.train_models.iter().all(|m| m.arch == self.eval_model.arch && m.role != self.eval_model.role),
                "gray-box attacks train on a same-architecture model fitted to other data"
            ),
            ScenarioKind::ClosedSet => ensure!(
                !self.train_models.contains(&self.eval_model),
                "closed-set attacks train on surrogates only"
            ),
            ScenarioKind::BlackBox => ensure!(
                self.train_models.iter().all(|m| m.arch != self.eval_model.arch),
                "black-box attacks must not see the evaluated architecture"
            ),
        }
        Ok(())
    }
}

/// One row of a scenario table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: ScenarioKind,
    pub eval_model: ModelKey,
    pub condition: alloc::string::String,
    pub target_ap: Option<f64>,
    pub non_target_map: Option<f64>,
}

/// Clean, power-matched AWGN and attacked rows for one evaluated model.
pub fn run_scenario(
    pipeline: &SpectrogramPipeline,
    spec: &ScenarioSpec,
    model: &DetectorModel,
    scenes: &[LabeledScene],
    tile: &CuapTile,
    target_class: usize,
    seed: Seed,
) -> Result<Vec<ScenarioRow>> {
    spec.validate()?;
    let offsets = eval_offsets(scenes.len(), seed.derive(1));
    let conditions = [
        Condition::Clean,
        Condition::Awgn { noise_power: tile.mean_power(), seed: seed.derive(2) },
        Condition::Attacked { tile, offsets: &offsets },
    ];
    conditions
        .iter()
        .map(|c| {
            let m = evaluate_condition(pipeline, model, scenes, c, target_class)?;
            Ok(ScenarioRow {
                scenario: spec.kind,
                eval_model: spec.eval_model,
                condition: c.name().into(),
                target_ap: m.target_ap,
                non_target_map: m.non_target_map,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub spr_db: f64,
    pub target_ap: Option<f64>,
    pub non_target_map: Option<f64>,
}

/// Trains one tile per budget level (weakest first) and evaluates it on
/// `eval_scenes` with `eval_model`. An infinite level evaluates a zero tile.
pub fn spr_sweep(
    problem: &AttackProblem<'_>,
    base: &AttackConfig,
    levels: &[f64],
    eval_model: &DetectorModel,
    eval_scenes: &[LabeledScene],
    seed: Seed,
    mut observer: impl FnMut(f64, &IterLog),
) -> Result<Vec<(SweepPoint, CuapTile)>> {
    ensure!(!levels.is_empty(), "SPR sweep needs at least one level");
    ensure!(levels.iter().all(|l| !l.is_nan()), "SPR levels must not be NaN");
    ensure!(
        levels.windows(2).all(|w| w[0] > w[1]),
        "SPR levels must be strictly descending (weakest perturbation first), got {:?}",
        levels
    );
    let offsets = eval_offsets(eval_scenes.len(), seed);
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let config = AttackConfig { min_spr_db: level, ..base.clone() };
        let tile = if level == f64::INFINITY {
            CuapTile::zeros(level)
        } else {
            train_cuap(problem, &config, |_, _| Ok(None), |l| observer(level, l))?.tile
        };
        let m = evaluate_condition(
            &problem.pipeline,
            eval_model,
            eval_scenes,
            &Condition::Attacked { tile: &tile, offsets: &offsets },
            base.target_class,
        )?;
        out.push((SweepPoint { spr_db: level, target_ap: m.target_ap, non_target_map: m.non_target_map }, tile));
    }
    Ok(out)
}

/// Impairments between the perturbation transmitter and the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OtaChannel {
    /// Draw a uniform tiling offset per scene; otherwise offset 0.
    pub random_offset: bool,
    /// Carrier offset applied to the perturbation only, uniform in
    /// `[-cfo_max_hz, cfo_max_hz]`.
    pub cfo_max_hz: f64,
    /// Receiver noise relative to the received power; `None` disables.
    pub snr_db: Option<f64>,
}

impl Default for OtaChannel {
    fn default() -> Self {
        Self { random_offset: true, cfo_max_hz: 20e3, snr_db: Some(20.0) }
    }
}

impl OtaChannel {
    pub fn ideal() -> Self {
        Self { random_offset: false, cfo_max_hz: 0.0, snr_db: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdrPair {
    pub target: Option<MdrEntry>,
    pub non_target: Option<MdrEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtaReport {
    pub clean: MdrPair,
    pub attacked: MdrPair,
}

/// Received clean and attacked I/Q for one scene under `channel`. Both
/// receive the same noise realization.
pub fn ota_receive(
    scene: &LabeledScene,
    tile: &CuapTile,
    channel: &OtaChannel,
    seed: Seed,
) -> Result<(IqBuffer, IqBuffer)> {
    ensure!(channel.cfo_max_hz >= 0.0 && channel.cfo_max_hz.is_finite(), "cfo_max_hz must be non-negative");
    let mut rng = seed.derive(1).rng();
    let offset = if channel.random_offset { rng.random_range(0..TILE_LEN) } else { 0 };
    let cfo = if channel.cfo_max_hz > 0.0 { rng.random_range(-channel.cfo_max_hz..=channel.cfo_max_hz) } else { 0.0 };
    let stream = tile_perturbation(tile, scene.iq.len(), offset, scene.iq.sample_rate_hz())?;
    let stream = apply_cfo(&stream, cfo, 0.0)?;
    let attacked = mix(&scene.iq, &stream)?;
    match channel.snr_db {
        None => Ok((scene.iq.clone(), attacked)),
        Some(snr) => {
            let noise = scene.iq.mean_power() * libm::pow(10.0, -snr / 10.0);
            let noise_seed = seed.derive(2);
            Ok((add_noise_power(&scene.iq, noise, noise_seed)?, add_noise_power(&attacked, noise, noise_seed)?))
        }
    }
}

fn mdr_pair(dets: &[Vec<Detection>], scenes: &[LabeledScene], num_classes: usize, target: usize) -> MdrPair {
    let gts: Vec<_> = scenes.iter().map(|s| s.boxes.clone()).collect();
    let others: Vec<usize> = (0..num_classes).filter(|&c| c != target).collect();
    MdrPair {
        target: mdr(dets, &gts, &[target], DEFAULT_MATCH_IOU),
        non_target: mdr(dets, &gts, &others, DEFAULT_MATCH_IOU),
    }
}

/// Missed-detection rates, target class versus the pooled non-target
/// classes, with and without the perturbation, through a simulated channel.
pub fn simulated_ota_eval(
    pipeline: &SpectrogramPipeline,
    model: &DetectorModel,
    scenes: &[LabeledScene],
    tile: &CuapTile,
    channel: &OtaChannel,
    target_class: usize,
    seed: Seed,
) -> Result<OtaReport> {
    ensure!(
        target_class < model.num_classes(),
        "target class {} outside the model's {} classes",
        target_class,
        model.num_classes()
    );
    let mut clean = Vec::with_capacity(scenes.len());
    let mut attacked = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let (c, a) = ota_receive(s, tile, channel, seed.derive(i as u64))
            .map_err(|e| crate::Error::InvalidArgument(format!("scene {}: {}", i, e)))?;
        clean.push(detect(pipeline, model, &c)?);
        attacked.push(detect(pipeline, model, &a)?);
    }
    let n = model.num_classes();
    Ok(OtaReport { clean: mdr_pair(&clean, scenes, n, target_class), attacked: mdr_pair(&attacked, scenes, n, target_class) })
}
