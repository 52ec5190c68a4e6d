use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{evasion_loss, match_targets, objective_raw_grad, protect_loss_scores, total_loss};
use crate::detector::DetectorModel;
use crate::error::{ensure, Error, Result};
use crate::rng::Seed;
use crate::scene::LabeledScene;
use crate::signal::{
    mix, project_spr, tile_perturbation, CuapTile, Grid, IqBuffer, SpectrogramPipeline, TILE_LEN,
};
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub target_class: usize,
    pub lambda: f64,
    pub tau: f64,
    pub min_spr_db: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Scenes drawn per iteration.
    pub batch_size: usize,
    /// The initial tile sits this far inside the power budget.
    pub init_margin_db: f64,
    /// Validation cadence in iterations; 0 validates only at the end.
    pub val_every: usize,
    pub seed: Seed,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            target_class: 0,
            lambda: 2.0,
            tau: 0.5,
            min_spr_db: 10.0,
            learning_rate: 4.0,
            iterations: 500,
            batch_size: 2,
            init_margin_db: 3.0,
            val_every: 50,
            seed: Seed(0),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.tau > 0.0 && self.tau < 1.0, "tau must lie in (0, 1), got {}", self.tau);
        ensure!(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be non-negative");
        ensure!(!self.min_spr_db.is_nan(), "min_spr_db must not be NaN");
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be non-negative"
        );
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!(self.init_margin_db.is_finite(), "init_margin_db must be finite");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub evade: f64,
    pub protect: f64,
    pub total: f64,
}

/// Losses and gradient with respect to the tile for one scene, one model
/// and one tiling offset. `clean_scores` are the model's scores on the
/// unperturbed scene and act as constants.
#[allow(clippy::too_many_arguments)]
pub fn scene_objective<T: Real>(
    pipeline: &SpectrogramPipeline,
    model: &DetectorModel,
    scene: &LabeledScene,
    clean_scores: &[T],
    delta: &CuapTile,
    offset: usize,
    config: &AttackConfig,
    want_grad: bool,
) -> Result<(ObjectiveParts, Option<Vec<Complex64>>)> {
    let stream = tile_perturbation(delta, scene.iq.len(), offset, scene.iq.sample_rate_hz())?;
    let adv = mix(&scene.iq, &stream)?;
    let (spec, trace) = pipeline.forward_traced(&adv)?;
    let input = spec.to_pseudo_rgb::<T>();
    let (grid, cache) = model.forward_cached(&input)?;
    ensure!(
        grid.scores.len() == clean_scores.len(),
        "clean reference has {} scores, prediction grid has {}",
        clean_scores.len(),
        grid.scores.len()
    );
    let matches = match_targets(&grid, &scene.boxes, config.target_class, config.tau);
    let evade = evasion_loss(&grid, &matches, config.target_class);
    let protect = protect_loss_scores(&grid.scores, clean_scores, grid.num_classes, config.target_class)?;
    let parts = ObjectiveParts { evade, protect, total: total_loss(evade, protect, config.lambda) };
    if !want_grad {
        return Ok((parts, None));
    }
    let d_raw = objective_raw_grad(
        cache.head_output(),
        &grid,
        clean_scores,
        &matches,
        config.target_class,
        config.lambda,
    );
    let g_in = model.backward_raw(&cache, d_raw, false, true)?.input.expect("requested");
    let (f, t) = (spec.f_bins(), spec.t_frames());
    let plane = f * t;
    let data = g_in.data();
    let summed = (0..plane).map(|i| (data[i] + data[plane + i] + data[2 * plane + i]).as_f64()).collect();
    let g_x = pipeline.backward(&trace, &Grid::from_vec(f, t, summed)?)?;
    Ok((parts, Some(fold_to_tile(&g_x, offset))))
}

/// Adjoint of tiling: accumulates a stream gradient onto tile samples.
pub fn fold_to_tile(stream_grad: &[Complex64], offset: usize) -> Vec<Complex64> {
    let mut g = vec![Complex64::new(0.0, 0.0); TILE_LEN];
    for (n, v) in stream_grad.iter().enumerate() {
        g[(n + offset) % TILE_LEN] += v;
    }
    g
}

/// Scenes, victim models and everything precomputed about them.
pub struct AttackProblem<'a> {
    pub pipeline: SpectrogramPipeline,
    pub scenes: &'a [LabeledScene],
    pub models: Vec<&'a DetectorModel>,
    /// `clean[scene][model]` scores on the unperturbed scene.
    pub clean: Vec<Vec<Vec<f32>>>,
    /// Average clean power over `scenes`; the projection reference.
    pub reference_power: f64,
}

impl<'a> AttackProblem<'a> {
    pub fn new(
        pipeline: SpectrogramPipeline,
        scenes: &'a [LabeledScene],
        models: Vec<&'a DetectorModel>,
    ) -> Result<Self> {
        ensure!(!scenes.is_empty(), "attack training split is empty");
        ensure!(!models.is_empty(), "attack needs at least one model");
        let mut clean = Vec::with_capacity(scenes.len());
        for s in scenes {
            let input = pipeline.spectrogram(&s.iq)?.to_pseudo_rgb::<f32>();
            let mut per_model = Vec::with_capacity(models.len());
            for m in &models {
                per_model.push(m.forward(&input)?.scores);
            }
            clean.push(per_model);
        }
        let reference_power = scenes.iter().map(|s| s.iq.mean_power()).sum::<f64>() / scenes.len() as f64;
        ensure!(reference_power > 0.0, "attack scenes carry no power");
        Ok(Self { pipeline, scenes, models, clean, reference_power })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub iter: usize,
    pub evade: f64,
    pub protect: f64,
    pub total: f64,
    pub spr_db: f64,
    pub val_target_ap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub tile: CuapTile,
    pub log: Vec<IterLog>,
    pub warnings: Vec<String>,
}

/// Complex Gaussian tile scaled to `min_spr_db + init_margin_db`.
pub fn initial_tile(reference_power: f64, config: &AttackConfig) -> Result<CuapTile> {
    let mut rng = config.seed.derive(1).rng();
    let samples: Vec<Complex64> = (0..TILE_LEN)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let tile = CuapTile::new(samples, config.min_spr_db)?;
    let target = config.min_spr_db + config.init_margin_db;
    let scale = libm::sqrt(reference_power * libm::pow(10.0, -target / 10.0) / tile.mean_power());
    let scaled = tile.samples().iter().map(|s| s * scale).collect();
    CuapTile::new(scaled, config.min_spr_db)
}

fn tile_spr_db(tile: &CuapTile, reference_power: f64) -> f64 {
    let p = tile.mean_power();
    if p == 0.0 {
        f64::INFINITY
    } else {
        10.0 * libm::log10(reference_power / p)
    }
}

/// Each iteration draws a scene batch with a fresh uniform tiling offset
/// per scene, sums the objective over models, averages over the batch,
/// takes a gradient step on the tile and projects it back onto the power
/// budget. The step is `learning_rate * reference_power * gradient`, which
/// keeps the rate independent of the I/Q amplitude scale. `validate` is
/// called every `val_every` iterations and after the last one; its value is
/// logged.
pub fn train_cuap(
    problem: &AttackProblem<'_>,
    config: &AttackConfig,
    mut validate: impl FnMut(usize, &CuapTile) -> Result<Option<f64>>,
    mut observer: impl FnMut(&IterLog),
) -> Result<AttackOutcome> {
    config.validate()?;
    let n_classes = problem.models[0].num_classes();
    ensure!(
        config.target_class < n_classes,
        "target class {} outside the {} detector classes",
        config.target_class,
        n_classes
    );
    let reference = problem.reference_power;
    let mut tile = project_spr(&initial_tile(reference, config)?, reference, config.min_spr_db)?;
    let mut rng = config.seed.derive(2).rng();
    let batch = config.batch_size.min(problem.scenes.len());
    let mut log = Vec::with_capacity(config.iterations);
    let mut warnings = Vec::new();
    for iter in 0..config.iterations {
        let picks = sample(&mut rng, problem.scenes.len(), batch).into_vec();
        let offsets: Vec<usize> = picks.iter().map(|_| rng.random_range(0..TILE_LEN)).collect();
        if picks.iter().all(|&i| problem.scenes[i].boxes.iter().all(|b| b.class_id != config.target_class)) {
            warnings.push(format!("iteration {}: batch holds no target-class boxes", iter));
        }
        let mut grad = vec![Complex64::new(0.0, 0.0); TILE_LEN];
        let mut parts = ObjectiveParts::default();
        for (&si, &offset) in picks.iter().zip(&offsets) {
            for (mi, model) in problem.models.iter().enumerate() {
                let (p, g) = scene_objective::<f32>(
                    &problem.pipeline,
                    model,
                    &problem.scenes[si],
                    &problem.clean[si][mi],
                    &tile,
                    offset,
                    config,
                    true,
                )?;
                parts.evade += p.evade;
                parts.protect += p.protect;
                parts.total += p.total;
                for (a, b) in grad.iter_mut().zip(g.expect("requested")) {
                    *a += b;
                }
            }
        }
        let inv = 1.0 / batch as f64;
        parts.evade *= inv;
        parts.protect *= inv;
        parts.total *= inv;
        if !parts.total.is_finite() || grad.iter().any(|g| !(g.re.is_finite() && g.im.is_finite())) {
            return Err(Error::TrainingFailure(format!(
                "non-finite attack objective at iteration {} (evade {}, protect {}, scenes {:?}, offsets {:?})",
                iter, parts.evade, parts.protect, picks, offsets
            )));
        }
        let step = config.learning_rate * reference * inv;
        for (d, g) in tile.samples_mut().iter_mut().zip(&grad) {
            *d -= g * step;
        }
        tile = project_spr(&tile, reference, config.min_spr_db)?;
        let spr = tile_spr_db(&tile, reference);
        ensure!(
            spr >= config.min_spr_db - 1e-9,
            "projection left the tile at {} dB, below the {} dB budget",
            spr,
            config.min_spr_db
        );
        let last = iter + 1 == config.iterations;
        let due = last || (config.val_every > 0 && (iter + 1) % config.val_every == 0);
        let val_target_ap = if due { validate(iter, &tile)? } else { None };
        let entry = IterLog {
            iter,
            evade: parts.evade,
            protect: parts.protect,
            total: parts.total,
            spr_db: spr,
            val_target_ap,
        };
        observer(&entry);
        log.push(entry);
    }
    Ok(AttackOutcome { tile, log, warnings })
}

/// `x_clean` plus the tile repeated from `offset`.
pub fn apply_attack(x_clean: &IqBuffer, delta: &CuapTile, offset: usize) -> Result<IqBuffer> {
    let stream = tile_perturbation(delta, x_clean.len(), offset, x_clean.sample_rate_hz())?;
    mix(x_clean, &stream)
}
