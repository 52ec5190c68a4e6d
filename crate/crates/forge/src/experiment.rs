//! The on-disk experiment: dataset, models, perturbations and reports under
//! one output root, driven by an [`ExperimentConfig`].
//!
//! ```text
//! <root>/dataset/{detector,attack}/manifest.json + scene_NNNN.cf32
//! <root>/models/<arch>-<role>-<hash>.{json,f32,metrics.json}, index.json
//! <root>/attacks/<name>-<hash>.{cf32,meta.json,log.csv}, index.json
//! <root>/reports/*.{csv,json,svg}
//! <root>/renders/*.{png,f32}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cuap_core::attack::{train_cuap, AttackProblem, IterLog};
use cuap_core::detector::{nms, train_detector, ArchId, DetectorModel, EpochLog, TrainSample};
use cuap_core::detector::{Detection, DEFAULT_CONF_THRESHOLD, DEFAULT_IOU_THRESHOLD};
use cuap_core::eval::{
    eval_offsets, simulated_ota_eval, spr_sweep, Condition, ConditionMetrics, MdrEntry, ModelKey, ModelRole,
    ScenarioKind, ScenarioSpec,
};
use cuap_core::scene::{plan_dataset, DatasetConfig, LabeledScene};
use cuap_core::signal::{compute_global_range, CuapTile, Grid, NormRange, SpectrogramPipeline};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{load_cuap, save_cuap, CuapSidecar};
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointDescriptor};
use crate::config::ExperimentConfig;
use crate::error::{ForgeError, Result};
use crate::hashing::sha256_hex;
use crate::iqfile::{read_iq, read_json, write_iq, write_json, IqMeta};
use crate::manifest::{load_split, Manifest, ManifestEntry, MANIFEST_FILE, MANIFEST_VERSION};
use crate::render::{overlay_png, spectrogram_png, write_raw_grid};
use crate::report::{write_sweep, write_table, ApRow, ApTable, MdrRow, MdrTable, SweepRow, SweepTable};

/// Which generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Detector,
    Attack,
}

impl DataKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            DataKind::Detector => "detector",
            DataKind::Attack => "attack",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "detector" => Some(DataKind::Detector),
            "attack" => Some(DataKind::Attack),
            _ => None,
        }
    }
}

pub fn role_name(role: ModelRole) -> &'static str {
    match role {
        ModelRole::Victim => "victim",
        ModelRole::Surrogate => "surrogate",
    }
}

pub fn model_key_name(key: ModelKey) -> String {
    format!("{}-{}", key.arch, role_name(key.role))
}

/// Index files map a stable name to the current content-hashed file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub sha256: String,
    pub config_hash: String,
}

type Index = BTreeMap<String, IndexEntry>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub detector_manifest: PathBuf,
    pub detector_manifest_sha256: String,
    pub attack_manifest: PathBuf,
    pub attack_manifest_sha256: String,
    pub norm_range: NormRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_id: usize,
    pub name: String,
    pub ap: f64,
    pub num_gt: usize,
}

/// Clean held-out accuracy of a trained detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub model: String,
    pub config_hash: String,
    pub weights_sha256: String,
    pub target_class: usize,
    pub target_ap: Option<f64>,
    pub non_target_map: Option<f64>,
    pub classes: Vec<ClassScore>,
    pub epochs: Vec<EpochLog>,
}

#[derive(Debug, Clone)]
pub struct TrainedDetector {
    pub path: PathBuf,
    pub descriptor: CheckpointDescriptor,
    pub metrics: DetectorMetrics,
}

#[derive(Debug, Clone)]
pub struct TrainedAttack {
    pub path: PathBuf,
    pub name: String,
    pub tile: CuapTile,
    pub sidecar: CuapSidecar,
    pub log: Vec<IterLog>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftPoint {
    pub offset: usize,
    pub target_ap: Option<f64>,
    pub non_target_map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftTable {
    pub config_hash: String,
    pub model: String,
    pub attack: String,
    pub points: Vec<ShiftPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub ap: ApTable,
    pub ota: Option<MdrTable>,
    pub shift: Option<ShiftTable>,
}

/// Detections on every scene under one condition, in parallel, ordered by
/// scene index.
pub fn detect_all(
    pipeline: &SpectrogramPipeline,
    model: &DetectorModel,
    scenes: &[LabeledScene],
    condition: &Condition<'_>,
) -> Result<Vec<Vec<Detection>>> {
    Ok(scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| cuap_core::eval::detect(pipeline, model, &condition.apply(i, s)?))
        .collect::<cuap_core::Result<Vec<_>>>()?)
}

pub fn evaluate_on(
    pipeline: &SpectrogramPipeline,
    model: &DetectorModel,
    scenes: &[LabeledScene],
    condition: &Condition<'_>,
    target_class: usize,
) -> Result<ConditionMetrics> {
    let dets = detect_all(pipeline, model, scenes, condition)?;
    Ok(ConditionMetrics::from_detections(&dets, scenes, model.num_classes(), target_class))
}

/// File-name stem of a perturbation. Closed-set tiles do not depend on the
/// evaluated model, so one tile serves every victim.
pub fn attack_name(kind: ScenarioKind, eval_arch: ArchId, spr_db: f64) -> String {
    match kind {
        ScenarioKind::ClosedSet => format!("CS-spr{spr_db}"),
        _ => format!("{}-{}-spr{spr_db}", kind.code(), eval_arch),
    }
}

type Note = Box<dyn Fn(&str) + Send + Sync>;

pub struct Workspace {
    root: PathBuf,
    config: ExperimentConfig,
    config_hash: String,
    note: Note,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let config_hash = config.config_hash();
        Ok(Self { root: root.into(), config, config_hash, note: Box::new(|_| {}) })
    }

    /// Receives one-line progress messages.
    pub fn with_progress(mut self, note: impl Fn(&str) + Send + Sync + 'static) -> Self {
        self.note = Box::new(note);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn dataset_dir(&self, kind: DataKind) -> PathBuf {
        self.root.join("dataset").join(kind.dir_name())
    }

    pub fn manifest_path(&self, kind: DataKind) -> PathBuf {
        self.dataset_dir(kind).join(MANIFEST_FILE)
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn attacks_dir(&self) -> PathBuf {
        self.root.join("attacks")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn renders_dir(&self) -> PathBuf {
        self.root.join("renders")
    }

    fn note(&self, msg: impl AsRef<str>) {
        (self.note)(msg.as_ref())
    }

    // ---- dataset ---------------------------------------------------------

    fn dataset_config(&self, kind: DataKind) -> DatasetConfig {
        match kind {
            DataKind::Detector => self.config.detector_dataset(),
            DataKind::Attack => self.config.attack_dataset(),
        }
    }

    /// Renders, writes and indexes one dataset. Returns the entries and,
    /// for scenes in `range_splits`, a strided sample of their dB values.
    fn write_scenes(&self, kind: DataKind, range_splits: &[&str]) -> Result<(Vec<ManifestEntry>, Vec<f64>)> {
        let cfg = self.dataset_config(kind);
        let plans = plan_dataset(&cfg)?;
        let dir = self.dataset_dir(kind);
        let stride = self.config.dataset.range_stride;
        let probe = SpectrogramPipeline::new(NormRange::new(0.0, 1.0)?);
        let results: Vec<(ManifestEntry, Vec<f64>)> = plans
            .par_iter()
            .map(|plan| {
                let mut record = plan.render(&cfg)?;
                record.iq.quantize_f32();
                let file = format!("scene_{:04}.cf32", plan.index);
                let description = format!(
                    "synthetic {} scene {}, split {}, SNR {} dB",
                    kind.dir_name(),
                    plan.index,
                    plan.split,
                    plan.snr_db
                );
                let sha256 = write_iq(&dir.join(&file), &record.iq, 0.0, &description)?;
                let sample = if range_splits.contains(&plan.split.as_str()) {
                    let db = probe.db_grid(&record.iq)?;
                    db.data().iter().step_by(stride).copied().collect()
                } else {
                    Vec::new()
                };
                let entry =
                    ManifestEntry { path: file, split: plan.split.clone(), boxes: record.boxes, snr_db: plan.snr_db, sha256 };
                Ok((entry, sample))
            })
            .collect::<Result<_>>()?;
        let mut entries = Vec::with_capacity(results.len());
        let mut pooled = Vec::new();
        for (e, s) in results {
            entries.push(e);
            pooled.extend(s);
        }
        Ok((entries, pooled))
    }

    fn write_manifest(&self, kind: DataKind, entries: Vec<ManifestEntry>, norm_range: NormRange) -> Result<(PathBuf, String)> {
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            classes: self.config.class_names(),
            norm_range,
            config_hash: self.config_hash.clone(),
            entries,
        };
        let path = self.manifest_path(kind);
        write_json(&path, &manifest)?;
        let bytes = std::fs::read(&path).map_err(crate::error::io_err(&path))?;
        Ok((path, sha256_hex(&bytes)))
    }

    /// Generates both datasets. The normalization range is fitted to the
    /// detector training splits only and shared by the attack dataset.
    pub fn gen_data(&self) -> Result<GenSummary> {
        let d = &self.config.dataset;
        self.note(format!("rendering {} detector scenes", d.detector_scenes));
        let (det_entries, pooled) = self.write_scenes(DataKind::Detector, &["target", "surrogate"])?;
        let grid = Grid::from_vec(1, pooled.len(), pooled)?;
        let norm_range = compute_global_range([&grid], d.range)?;
        drop(grid);
        self.note(format!("dB range {:.2} .. {:.2}", norm_range.m_min_db, norm_range.m_max_db));
        let (detector_manifest, detector_manifest_sha256) =
            self.write_manifest(DataKind::Detector, det_entries, norm_range)?;
        self.note(format!("rendering {} attack scenes", d.attack_scenes));
        let (att_entries, _) = self.write_scenes(DataKind::Attack, &[])?;
        let (attack_manifest, attack_manifest_sha256) = self.write_manifest(DataKind::Attack, att_entries, norm_range)?;
        Ok(GenSummary { detector_manifest, detector_manifest_sha256, attack_manifest, attack_manifest_sha256, norm_range })
    }

    pub fn manifest(&self, kind: DataKind) -> Result<Manifest> {
        let path = self.manifest_path(kind);
        if !path.exists() {
            return Err(ForgeError::Missing(vec![format!("{} (run gen-data)", path.display())]));
        }
        Manifest::load(&path)
    }

    pub fn pipeline(&self) -> Result<SpectrogramPipeline> {
        Ok(SpectrogramPipeline::new(self.manifest(DataKind::Detector)?.norm_range))
    }

    pub fn load_scenes(&self, kind: DataKind, split: &str) -> Result<Vec<LabeledScene>> {
        let manifest = self.manifest(kind)?;
        load_split(&manifest, &self.dataset_dir(kind), split)
    }

    // ---- detectors -------------------------------------------------------

    fn read_index(&self, dir: &Path) -> Result<Index> {
        let path = dir.join("index.json");
        if path.exists() {
            read_json(&path)
        } else {
            Ok(Index::new())
        }
    }

    fn update_index(&self, dir: &Path, name: &str, entry: IndexEntry) -> Result<()> {
        let mut index = self.read_index(dir)?;
        index.insert(name.to_string(), entry);
        write_json(&dir.join("index.json"), &index)
    }

    fn training_samples(&self, manifest: &Manifest, split: &str) -> Result<Vec<TrainSample>> {
        let pipeline = SpectrogramPipeline::new(manifest.norm_range);
        let dir = self.dataset_dir(DataKind::Detector);
        let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
        entries
            .par_iter()
            .map(|e| {
                let (iq, _) = read_iq(&dir.join(&e.path))?;
                let input = pipeline.spectrogram(&iq)?.to_pseudo_rgb::<f32>();
                Ok(TrainSample { input, boxes: e.boxes.clone() })
            })
            .collect()
    }

    /// Trains one detector on its split (`target` for victims, `surrogate`
    /// for surrogates), scores it on the `test` split and writes the
    /// checkpoint with its metrics.
    pub fn train_detector(&self, key: ModelKey, mut observer: impl FnMut(&EpochLog)) -> Result<TrainedDetector> {
        let manifest = self.manifest(DataKind::Detector)?;
        let split = match key.role {
            ModelRole::Victim => "target",
            ModelRole::Surrogate => "surrogate",
        };
        let samples = self.training_samples(&manifest, split)?;
        self.note(format!("training {} on {} scenes", model_key_name(key), samples.len()));
        let hyper = self.config.train_hyper(key);
        let (model, epochs) = train_detector(&samples, key.arch, self.config.num_classes(), &hyper, |e| observer(e))?;
        drop(samples);

        let pipeline = SpectrogramPipeline::new(manifest.norm_range);
        let test = load_split(&manifest, &self.dataset_dir(DataKind::Detector), "test")?;
        let target = self.config.attack.target_class;
        let m = evaluate_on(&pipeline, &model, &test, &Condition::Clean, target)?;
        let names = self.config.class_names();
        let classes = m
            .report
            .classes
            .iter()
            .map(|c| ClassScore { class_id: c.class_id, name: names[c.class_id].clone(), ap: c.ap, num_gt: c.num_gt })
            .collect();

        let dir = self.models_dir();
        let (path, descriptor) = save_checkpoint(&dir, &model, key.role, manifest.norm_range, &self.config_hash)?;
        let metrics = DetectorMetrics {
            model: model_key_name(key),
            config_hash: self.config_hash.clone(),
            weights_sha256: descriptor.weights_sha256.clone(),
            target_class: target,
            target_ap: m.target_ap,
            non_target_map: m.non_target_map,
            classes,
            epochs,
        };
        write_json(&path.with_extension("metrics.json"), &metrics)?;
        self.update_index(
            &dir,
            &model_key_name(key),
            IndexEntry {
                file: path.file_name().unwrap().to_string_lossy().into_owned(),
                sha256: descriptor.weights_sha256.clone(),
                config_hash: self.config_hash.clone(),
            },
        )?;
        Ok(TrainedDetector { path, descriptor, metrics })
    }

    fn model_path(&self, key: ModelKey) -> Result<Option<PathBuf>> {
        let dir = self.models_dir();
        Ok(self.read_index(&dir)?.get(&model_key_name(key)).map(|e| dir.join(&e.file)))
    }

    pub fn load_detector(&self, key: ModelKey) -> Result<(DetectorModel, CheckpointDescriptor)> {
        self.load_detectors(&[key]).map(|mut v| v.remove(0))
    }

    /// Loads several checkpoints, reporting every missing one at once.
    pub fn load_detectors(&self, keys: &[ModelKey]) -> Result<Vec<(DetectorModel, CheckpointDescriptor)>> {
        let mut missing = Vec::new();
        let mut paths = Vec::new();
        for &k in keys {
            match self.model_path(k)? {
                Some(p) if p.exists() => paths.push(p),
                _ => missing.push(format!(
                    "detector {} (run train-detector --arch {} --role {})",
                    model_key_name(k),
                    k.arch,
                    role_name(k.role)
                )),
            }
        }
        if !missing.is_empty() {
            return Err(ForgeError::Missing(missing));
        }
        paths.iter().map(|p| load_checkpoint(p)).collect()
    }

    // ---- perturbations ---------------------------------------------------

    /// Trains the tile for one scenario. Validation during training uses the
    /// attacker's first model, since transfer scenarios cannot query the
    /// victim.
    pub fn train_attack(
        &self,
        kind: ScenarioKind,
        eval_arch: ArchId,
        spr_db: f64,
        iterations: Option<usize>,
        mut observer: impl FnMut(&IterLog),
    ) -> Result<TrainedAttack> {
        let spec = ScenarioSpec::new(kind, eval_arch, &self.config.detector.archs)?;
        let loaded = self.load_detectors(&spec.train_models)?;
        let manifest = self.manifest(DataKind::Attack)?;
        if let Some((_, d)) = loaded.iter().find(|(_, d)| d.norm_range != manifest.norm_range) {
            return Err(ForgeError::Config(format!(
                "detector {}-{} was trained with a different normalization range than the attack dataset",
                d.arch,
                role_name(d.role)
            )));
        }
        let pipeline = SpectrogramPipeline::new(manifest.norm_range);
        let dir = self.dataset_dir(DataKind::Attack);
        let train = load_split(&manifest, &dir, "train")?;
        let val = load_split(&manifest, &dir, "val")?;
        let models: Vec<&DetectorModel> = loaded.iter().map(|(m, _)| m).collect();
        let problem = AttackProblem::new(pipeline, &train, models.clone())?;

        let cfg_arch = if kind == ScenarioKind::ClosedSet { self.config.detector.archs[0] } else { eval_arch };
        let mut config = self.config.attack_config(kind, cfg_arch, spr_db);
        if let Some(n) = iterations {
            config.iterations = n;
        }
        let name = attack_name(kind, eval_arch, spr_db);
        self.note(format!(
            "training {name} on {} scenes with {} model(s), {} iterations",
            train.len(),
            models.len(),
            config.iterations
        ));
        let val_offsets = eval_offsets(val.len(), self.config.eval_seed().derive(1));
        let target = config.target_class;
        let outcome = train_cuap(
            &problem,
            &config,
            |_, tile| {
                let c = Condition::Attacked { tile, offsets: &val_offsets };
                Ok(evaluate_on(&pipeline, models[0], &val, &c, target).map_err(core_err)?.target_ap)
            },
            |l| observer(l),
        )?;

        let sidecar = CuapSidecar {
            iq: IqMeta {
                sample_rate_hz: self.config.dataset.sample_rate_hz,
                center_freq_hz: 0.0,
                length_samples: 0,
                description: format!("{} perturbation tile, target class {target}, SPR >= {spr_db} dB", kind.code()),
            },
            spr_budget_db: spr_db,
            target_class: target,
            config_hash: self.config_hash.clone(),
            scenario: kind,
            eval_model: (kind != ScenarioKind::ClosedSet).then_some(spec.eval_model),
            models: spec.train_models.clone(),
            model_hashes: loaded.iter().map(|(_, d)| d.weights_sha256.clone()).collect(),
            iterations: config.iterations,
            reference_power: problem.reference_power,
            samples_sha256: String::new(),
        };
        let mut tile = outcome.tile;
        tile.quantize_f32();
        let adir = self.attacks_dir();
        let (path, sidecar) = save_cuap(&adir, &name, &tile, sidecar, &outcome.log)?;
        self.update_index(
            &adir,
            &name,
            IndexEntry {
                file: path.file_name().unwrap().to_string_lossy().into_owned(),
                sha256: sidecar.samples_sha256.clone(),
                config_hash: self.config_hash.clone(),
            },
        )?;
        for w in &outcome.warnings {
            self.note(format!("warning: {w}"));
        }
        Ok(TrainedAttack { path, name, tile, sidecar, log: outcome.log, warnings: outcome.warnings })
    }

    pub fn load_attack(&self, name: &str) -> Result<(CuapTile, CuapSidecar)> {
        self.load_attacks(&[name.to_string()]).map(|mut v| v.remove(0))
    }

    pub fn load_attacks(&self, names: &[String]) -> Result<Vec<(CuapTile, CuapSidecar)>> {
        let dir = self.attacks_dir();
        let index = self.read_index(&dir)?;
        let mut missing = Vec::new();
        let mut paths = Vec::new();
        for n in names {
            match index.get(n).map(|e| dir.join(&e.file)) {
                Some(p) if p.exists() => paths.push(p),
                _ => missing.push(format!("perturbation {n} (run train-attack)")),
            }
        }
        if !missing.is_empty() {
            return Err(ForgeError::Missing(missing));
        }
        paths.iter().map(|p| load_cuap(p)).collect()
    }

    // ---- evaluation ------------------------------------------------------

    fn check_hashes<'a>(&self, sources: impl IntoIterator<Item = (String, &'a str)>, force: bool) -> Result<()> {
        let foreign: Vec<String> = sources
            .into_iter()
            .filter(|(_, h)| *h != self.config_hash)
            .map(|(what, h)| format!("{what} has {}", crate::hashing::short(h)))
            .collect();
        if foreign.is_empty() || force {
            if !foreign.is_empty() {
                self.note(format!("warning: mixed configs: {}", foreign.join(", ")));
            }
            return Ok(());
        }
        Err(ForgeError::MixedConfig(format!(
            "current config is {}; {}",
            crate::hashing::short(&self.config_hash),
            foreign.join(", ")
        )))
    }

    /// Builds the AP table (clean, power-matched noise and one row per
    /// scenario for every victim), the simulated over-the-air MDR table and
    /// the shift-invariance profile, and writes them to `reports/`.
    pub fn evaluate(&self, force: bool, clean_only: bool) -> Result<EvalSummary> {
        let archs = self.config.detector.archs.clone();
        let spr = self.config.attack.min_spr_db;
        let target = self.config.attack.target_class;
        let manifest = self.manifest(DataKind::Attack)?;
        let victims: Vec<ModelKey> = archs.iter().map(|&a| ModelKey::victim(a)).collect();
        let models = self.load_detectors(&victims)?;
        let mut names: Vec<String> = Vec::new();
        if !clean_only {
            for &a in &archs {
                for &k in &self.config.eval.scenarios {
                    let n = attack_name(k, a, spr);
                    if !names.contains(&n) {
                        names.push(n);
                    }
                }
            }
        }
        let attacks: BTreeMap<String, (CuapTile, CuapSidecar)> =
            names.iter().cloned().zip(self.load_attacks(&names)?).collect();
        let mut sources: Vec<(String, &str)> = vec![("attack manifest".into(), manifest.config_hash.as_str())];
        for (m, d) in &models {
            sources.push((format!("detector {}", model_key_name(ModelKey::victim(m.arch()))), d.config_hash.as_str()));
        }
        for (n, (_, s)) in &attacks {
            sources.push((format!("perturbation {n}"), s.config_hash.as_str()));
        }
        self.check_hashes(sources, force)?;

        let pipeline = SpectrogramPipeline::new(manifest.norm_range);
        let scenes = load_split(&manifest, &self.dataset_dir(DataKind::Attack), "test")?;
        let seed = self.config.eval_seed();
        let offsets = eval_offsets(scenes.len(), seed.derive(1));
        let mut rows = Vec::new();
        for (model, _) in &models {
            let a = model.arch();
            let label = a.to_string();
            self.note(format!("evaluating victim {label}"));
            let mut push = |condition: &str, m: ConditionMetrics| {
                rows.push(ApRow {
                    model: label.clone(),
                    condition: condition.into(),
                    target_ap: m.target_ap,
                    non_target_map: m.non_target_map,
                })
            };
            push("clean", evaluate_on(&pipeline, model, &scenes, &Condition::Clean, target)?);
            if clean_only {
                continue;
            }
            let tile_of = |k: ScenarioKind| &attacks[&attack_name(k, a, spr)].0;
            let matched = tile_of(self.config.eval.scenarios[0]).mean_power();
            let awgn = Condition::Awgn { noise_power: matched, seed: seed.derive(2) };
            push("awgn", evaluate_on(&pipeline, model, &scenes, &awgn, target)?);
            for &k in &self.config.eval.scenarios {
                let c = Condition::Attacked { tile: tile_of(k), offsets: &offsets };
                push(k.code(), evaluate_on(&pipeline, model, &scenes, &c, target)?);
            }
        }
        let ap = ApTable { config_hash: self.config_hash.clone(), target_class: target, rows };
        let reports = self.reports_dir();
        write_table(&reports, "table1", &ap, &ap.rows)?;

        let focus = self.config.eval.focus_arch;
        let wb = attack_name(ScenarioKind::WhiteBox, focus, spr);
        let focus_model = &models.iter().find(|(m, _)| m.arch() == focus).expect("focus arch validated").0;
        let (ota, shift) = match attacks.get(&wb) {
            Some((tile, _)) if !clean_only => {
                self.note(format!("simulated over-the-air run on {focus}"));
                let ota = self.ota_table(&pipeline, focus_model, &scenes, tile)?;
                write_table(&reports, "table2", &ota, &ota.rows)?;
                let shift = self.shift_profile(&pipeline, focus_model, &scenes, tile, &wb)?;
                write_table(&reports, "shift", &shift, &shift.points)?;
                (Some(ota), Some(shift))
            }
            _ => (None, None),
        };
        Ok(EvalSummary { ap, ota, shift })
    }

    pub fn ota_table(
        &self,
        pipeline: &SpectrogramPipeline,
        model: &DetectorModel,
        scenes: &[LabeledScene],
        tile: &CuapTile,
    ) -> Result<MdrTable> {
        let target = self.config.attack.target_class;
        let channel = self.config.eval.channel;
        let r = simulated_ota_eval(pipeline, model, scenes, tile, &channel, target, self.config.eval_seed().derive(3))?;
        let row = |condition: &str, t: &Option<MdrEntry>, n: &Option<MdrEntry>| MdrRow {
            model: model.arch().to_string(),
            condition: condition.into(),
            target_mdr: t.as_ref().map(|e| e.mdr),
            target_missed: t.as_ref().map_or(0, |e| e.missed),
            target_total: t.as_ref().map_or(0, |e| e.total),
            non_target_mdr: n.as_ref().map(|e| e.mdr),
            non_target_missed: n.as_ref().map_or(0, |e| e.missed),
            non_target_total: n.as_ref().map_or(0, |e| e.total),
        };
        Ok(MdrTable {
            config_hash: self.config_hash.clone(),
            target_class: target,
            rows: vec![
                row("clean", &r.clean.target, &r.clean.non_target),
                row("attacked", &r.attacked.target, &r.attacked.non_target),
            ],
        })
    }

    /// Target AP with every scene tiled from the same offset, for
    /// `eval.shift_offsets` random offsets.
    pub fn shift_profile(
        &self,
        pipeline: &SpectrogramPipeline,
        model: &DetectorModel,
        scenes: &[LabeledScene],
        tile: &CuapTile,
        attack: &str,
    ) -> Result<ShiftTable> {
        let target = self.config.attack.target_class;
        let offsets = eval_offsets(self.config.eval.shift_offsets, self.config.eval_seed().derive(4));
        let points = offsets
            .iter()
            .map(|&offset| {
                let same = vec![offset; scenes.len()];
                let m = evaluate_on(pipeline, model, scenes, &Condition::Attacked { tile, offsets: &same }, target)?;
                Ok(ShiftPoint { offset, target_ap: m.target_ap, non_target_map: m.non_target_map })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ShiftTable {
            config_hash: self.config_hash.clone(),
            model: model.arch().to_string(),
            attack: attack.into(),
            points,
        })
    }

    /// White-box tiles at each budget level, evaluated on the attack test
    /// split. Tiles are written to `attacks/` as `sweep-<arch>-spr<level>`.
    pub fn sweep_spr(
        &self,
        arch: ArchId,
        levels: &[f64],
        iterations: Option<usize>,
        mut observer: impl FnMut(f64, &IterLog),
    ) -> Result<SweepTable> {
        let key = ModelKey::victim(arch);
        let (model, desc) = self.load_detector(key)?;
        let manifest = self.manifest(DataKind::Attack)?;
        let pipeline = SpectrogramPipeline::new(manifest.norm_range);
        let dir = self.dataset_dir(DataKind::Attack);
        let train = load_split(&manifest, &dir, "train")?;
        let test = load_split(&manifest, &dir, "test")?;
        let problem = AttackProblem::new(pipeline, &train, vec![&model])?;
        let mut base = self.config.attack_config(ScenarioKind::WhiteBox, arch, levels[0]);
        base.val_every = 0;
        if let Some(n) = iterations {
            base.iterations = n;
        }
        self.note(format!("sweeping {arch} over {levels:?} dB, {} iterations each", base.iterations));
        let points = spr_sweep(&problem, &base, levels, &model, &test, self.config.eval_seed().derive(5), |l, log| {
            observer(l, log)
        })?;
        let adir = self.attacks_dir();
        let mut rows = Vec::new();
        for (p, tile) in points {
            rows.push(SweepRow { spr_db: p.spr_db, target_ap: p.target_ap, non_target_map: p.non_target_map });
            if !p.spr_db.is_finite() {
                continue;
            }
            let mut tile = tile;
            tile.quantize_f32();
            let name = format!("sweep-{arch}-spr{}", p.spr_db);
            let sidecar = CuapSidecar {
                iq: IqMeta {
                    sample_rate_hz: self.config.dataset.sample_rate_hz,
                    center_freq_hz: 0.0,
                    length_samples: 0,
                    description: format!("SPR sweep tile for {arch} at {} dB", p.spr_db),
                },
                spr_budget_db: p.spr_db,
                target_class: base.target_class,
                config_hash: self.config_hash.clone(),
                scenario: ScenarioKind::WhiteBox,
                eval_model: Some(key),
                models: vec![key],
                model_hashes: vec![desc.weights_sha256.clone()],
                iterations: base.iterations,
                reference_power: problem.reference_power,
                samples_sha256: String::new(),
            };
            let (path, sidecar) = save_cuap(&adir, &name, &tile, sidecar, &[])?;
            self.update_index(
                &adir,
                &name,
                IndexEntry {
                    file: path.file_name().unwrap().to_string_lossy().into_owned(),
                    sha256: sidecar.samples_sha256,
                    config_hash: self.config_hash.clone(),
                },
            )?;
        }
        let table = SweepTable {
            config_hash: self.config_hash.clone(),
            target_class: base.target_class,
            model: arch.to_string(),
            rows,
        };
        write_sweep(&self.reports_dir(), &format!("sweep-{arch}"), &table)?;
        Ok(table)
    }

    // ---- rendering -------------------------------------------------------

    /// Writes the scene's spectrogram as grayscale PNG and raw `f32` grid,
    /// plus an overlay PNG with ground truth and, when `arch` is given, that
    /// victim's detections. `attack` names a stored tile to apply first.
    /// Returns the overlay path.
    pub fn render(&self, kind: DataKind, index: usize, arch: Option<ArchId>, attack: Option<&str>) -> Result<PathBuf> {
        let manifest = self.manifest(kind)?;
        let entry = manifest
            .entries
            .get(index)
            .ok_or_else(|| ForgeError::Config(format!("scene index {index} is outside the {} scenes", manifest.entries.len())))?;
        let (mut iq, _) = read_iq(&self.dataset_dir(kind).join(&entry.path))?;
        let mut stem = format!("{}-scene_{index:04}", kind.dir_name());
        if let Some(name) = attack {
            let (tile, _) = self.load_attack(name)?;
            iq = cuap_core::attack::apply_attack(&iq, &tile, 0)?;
            stem.push('-');
            stem.push_str(name);
        }
        let pipeline = SpectrogramPipeline::new(manifest.norm_range);
        let spec = pipeline.spectrogram(&iq)?;
        let dir = self.renders_dir();
        spectrogram_png(&dir.join(format!("{stem}.png")), spec.values())?;
        write_raw_grid(&dir.join(format!("{stem}.f32")), spec.values())?;
        let detections = match arch {
            Some(a) => {
                let (model, _) = self.load_detector(ModelKey::victim(a))?;
                stem.push('-');
                stem.push_str(a.name());
                nms(&model.forward(&spec.to_pseudo_rgb::<f32>())?, DEFAULT_CONF_THRESHOLD, DEFAULT_IOU_THRESHOLD)
            }
            None => Vec::new(),
        };
        let overlay = dir.join(format!("{stem}-overlay.png"));
        overlay_png(&overlay, spec.values(), &entry.boxes, &detections)?;
        Ok(overlay)
    }
}

fn core_err(e: ForgeError) -> cuap_core::Error {
    match e {
        ForgeError::Core(c) => c,
        other => cuap_core::Error::InvalidState(other.to_string()),
    }
}

