use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{sigmoid, ArchId, DetectorModel, BOX_CHANNELS, GRID_STRIDE};
use crate::error::{ensure, Error, Result};
use crate::rng::Seed;
use crate::scene::GroundTruthBox;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables.
    pub grad_clip: Option<f64>,
    pub seed: Seed,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 2,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            grad_clip: Some(10.0),
            seed: Seed(0),
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, "epochs must be at least 1");
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning_rate must be positive"
        );
        ensure!((0.0..1.0).contains(&self.momentum), "momentum must be in [0, 1)");
        ensure!(self.weight_decay >= 0.0, "weight_decay must be non-negative");
        if let Some(c) = self.grad_clip {
            ensure!(c > 0.0, "grad_clip must be positive");
        }
        Ok(())
    }

    /// Cosine-decayed rate for a step in `[0, total)`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let t = step as f64 / total.max(1) as f64;
        0.5 * self.learning_rate * (1.0 + libm::cos(core::f64::consts::PI * t))
    }
}

/// One pseudo-RGB input with its annotations in bin coordinates.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Tensor<f32>,
    pub boxes: Vec<GroundTruthBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub class_loss: f64,
    pub box_loss: f64,
    pub learning_rate: f64,
}

/// Regression target of the cell containing a box center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    pub cell: usize,
    pub class_id: usize,
    /// Raw head values that decode exactly to the box.
    pub raw: [f64; 4],
}

/// Centered-cell assignment. When several boxes share a cell the cell is
/// positive for each of their classes and regresses the largest box.
pub fn assign_targets(boxes: &[GroundTruthBox], h: usize, w: usize) -> Vec<CellTarget> {
    let (gh, gw) = (h / GRID_STRIDE, w / GRID_STRIDE);
    let (sh, sw) = ((h / gh) as f64, (w / gw) as f64);
    let mut out: Vec<(CellTarget, f64)> = Vec::new();
    for b in boxes {
        let r = b.rect();
        let (cx, cy) = r.center();
        let gx = ((cx / sw) as usize).min(gw - 1);
        let gy = ((cy / sh) as usize).min(gh - 1);
        let raw = [
            cx / sw - gx as f64 - 0.5,
            cy / sh - gy as f64 - 0.5,
            libm::log(r.width() / sw),
            libm::log(r.height() / sh),
        ];
        out.push((CellTarget { cell: gy * gw + gx, class_id: b.class_id, raw }, r.area()));
    }
    // Largest box per cell wins the regression target.
    let mut targets: Vec<CellTarget> = Vec::with_capacity(out.len());
    for (i, (t, area)) in out.iter().enumerate() {
        let best = out
            .iter()
            .filter(|(o, _)| o.cell == t.cell)
            .map(|(o, a)| (o.raw, *a))
            .fold((t.raw, *area), |acc, x| if x.1 > acc.1 { x } else { acc });
        let dup = out[..i].iter().any(|(o, _)| o.cell == t.cell && o.class_id == t.class_id);
        if !dup {
            targets.push(CellTarget { raw: best.0, ..*t });
        }
    }
    targets
}

/// Classification and box loss on the raw head output, returning
/// `(class_loss, box_loss, d_raw)`. Both terms are normalized by the
/// number of positive cells.
pub fn detection_loss(
    raw: &[f32],
    num_classes: usize,
    cells: usize,
    targets: &[CellTarget],
) -> (f64, f64, Vec<f32>) {
    let mut positive = vec![false; cells * num_classes];
    let mut box_cells: Vec<(usize, [f64; 4])> = Vec::new();
    for t in targets {
        positive[t.cell * num_classes + t.class_id] = true;
        if !box_cells.iter().any(|(c, _)| *c == t.cell) {
            box_cells.push((t.cell, t.raw));
        }
    }
    let norm = (box_cells.len().max(1)) as f64;
    let mut d = vec![0.0f32; raw.len()];
    let mut class_loss = 0.0;
    for i in 0..cells {
        for k in 0..num_classes {
            let idx = (BOX_CHANNELS + k) * cells + i;
            let z = raw[idx] as f64;
            let y = if positive[i * num_classes + k] { 1.0 } else { 0.0 };
            class_loss += z.max(0.0) - z * y + libm::log1p(libm::exp(-z.abs()));
            d[idx] = ((sigmoid(z) - y) / norm) as f32;
        }
    }
    let mut box_loss = 0.0;
    for (cell, target) in &box_cells {
        for (ch, t) in target.iter().enumerate() {
            let idx = ch * cells + cell;
            let diff = raw[idx] as f64 - t;
            box_loss += diff.abs();
            d[idx] = (diff.signum() / norm) as f32;
        }
    }
    (class_loss / norm, box_loss / norm, d)
}

/// Minibatch SGD with momentum and cosine decay. `observer` sees each
/// epoch's averaged losses.
pub fn train_detector(
    samples: &[TrainSample],
    arch: ArchId,
    num_classes: usize,
    hyper: &TrainHyper,
    mut observer: impl FnMut(&EpochLog),
) -> Result<(DetectorModel, Vec<EpochLog>)> {
    hyper.validate()?;
    ensure!(!samples.is_empty(), "training split is empty");
    let mut model = DetectorModel::new(arch, num_classes, hyper.seed.derive(1))?;
    let mut velocity = vec![0.0f32; model.weights().len()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = hyper.seed.derive(2).rng();
    let steps_per_epoch = samples.len().div_ceil(hyper.batch_size);
    let total_steps = steps_per_epoch * hyper.epochs;
    let mut logs = Vec::with_capacity(hyper.epochs);
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let (mut sum_cls, mut sum_box) = (0.0, 0.0);
        let lr_epoch = hyper.lr_at(step, total_steps);
        for batch in order.chunks(hyper.batch_size) {
            let mut grad = vec![0.0f32; model.weights().len()];
            for &i in batch {
                let s = &samples[i];
                let (_, cache) = model.forward_cached(&s.input)?;
                let (h, w) = (s.input.shape()[1], s.input.shape()[2]);
                let cells = (h / GRID_STRIDE) * (w / GRID_STRIDE);
                let targets = assign_targets(&s.boxes, h, w);
                let (cls, bx, d_raw) = detection_loss(cache.head_output(), num_classes, cells, &targets);
                if !(cls.is_finite() && bx.is_finite()) {
                    return Err(Error::TrainingFailure(format!(
                        "loss is not finite at epoch {} (class {}, box {}) on sample {}",
                        epoch, cls, bx, i
                    )));
                }
                sum_cls += cls;
                sum_box += bx;
                let g = model.backward_raw(&cache, d_raw, true, false)?.weights.expect("requested");
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += *b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mut norm_sq = 0.0f64;
            for (g, &wt) in grad.iter_mut().zip(model.weights()) {
                *g = (*g as f64 * scale + hyper.weight_decay * wt as f64) as f32;
                norm_sq += (*g as f64) * (*g as f64);
            }
            let norm = libm::sqrt(norm_sq);
            if !norm.is_finite() {
                return Err(Error::TrainingFailure(format!(
                    "gradient norm is not finite at epoch {}, step {}",
                    epoch, step
                )));
            }
            let clip = match hyper.grad_clip {
                Some(c) if norm > c => c / norm,
                _ => 1.0,
            };
            let lr = hyper.lr_at(step, total_steps);
            let mom = hyper.momentum as f32;
            for ((wt, v), g) in model.weights_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = mom * *v + (*g as f64 * clip) as f32;
                *wt -= (lr as f32) * *v;
            }
            step += 1;
        }
        let n = samples.len() as f64;
        let log = EpochLog {
            epoch,
            loss: (sum_cls + sum_box) / n,
            class_loss: sum_cls / n,
            box_loss: sum_box / n,
            learning_rate: lr_epoch,
        };
        observer(&log);
        logs.push(log);
    }
    Ok((model, logs))
}
