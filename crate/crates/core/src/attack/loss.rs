use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::detector::{PredictionGrid, BOX_CHANNELS};
use crate::error::{ensure, Result};
use crate::geometry::iou;
use crate::scene::GroundTruthBox;
use crate::tensor::Real;

/// Upper clamp on scores inside the evasion logarithm.
pub const SCORE_CLAMP: f64 = 1.0 - 1e-7;

/// Predictions overlapping each target-class ground-truth box.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchSet {
    /// One entry per target-class box, in input order: the prediction
    /// indices whose box has IoU of at least `tau` with it.
    pub per_box: Vec<Vec<usize>>,
}

impl MatchSet {
    pub fn is_empty(&self) -> bool {
        self.per_box.iter().all(Vec::is_empty)
    }

    /// Sorted, deduplicated union over all boxes.
    pub fn union(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.per_box.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

pub fn match_targets<T: Real>(
    preds: &PredictionGrid<T>,
    gts: &[GroundTruthBox],
    target_class: usize,
    tau: f64,
) -> MatchSet {
    let rects: Vec<_> = (0..preds.cells()).map(|i| preds.rect(i)).collect();
    let per_box = gts
        .iter()
        .filter(|g| g.class_id == target_class)
        .map(|g| {
            let r = g.rect();
            rects.iter().enumerate().filter(|(_, b)| iou(b, &r) >= tau).map(|(i, _)| i).collect()
        })
        .collect();
    MatchSet { per_box }
}

/// Sum over boxes and their matched predictions of `-ln(1 - s)`, counting
/// a prediction once per box it matches.
pub fn evasion_loss<T: Real>(preds: &PredictionGrid<T>, matches: &MatchSet, target_class: usize) -> f64 {
    matches
        .per_box
        .iter()
        .flatten()
        .map(|&i| -libm::log(1.0 - preds.score(i, target_class).as_f64().min(SCORE_CLAMP)))
        .sum()
}

/// Mean absolute change of the non-target scores against the clean
/// reference, over cells and non-target classes.
pub fn protect_loss<T: Real>(
    adv: &PredictionGrid<T>,
    clean: &PredictionGrid<T>,
    target_class: usize,
) -> Result<f64> {
    protect_loss_scores(&adv.scores, &clean.scores, adv.num_classes, target_class)
}

pub(crate) fn protect_loss_scores<T: Real>(
    adv: &[T],
    clean: &[T],
    num_classes: usize,
    target_class: usize,
) -> Result<f64> {
    ensure!(
        adv.len() == clean.len(),
        "prediction grids differ in size ({} vs {} scores)",
        adv.len(),
        clean.len()
    );
    ensure!(num_classes >= 2, "the protect term needs at least one non-target class");
    let cells = adv.len() / num_classes;
    let mut acc = 0.0;
    for i in 0..cells {
        for c in (0..num_classes).filter(|&c| c != target_class) {
            let k = i * num_classes + c;
            acc += (adv[k].as_f64() - clean[k].as_f64()).abs();
        }
    }
    Ok(acc / (cells * (num_classes - 1)) as f64)
}

pub fn total_loss(evade: f64, protect: f64, lambda: f64) -> f64 {
    evade + lambda * protect
}

/// Gradient of `evade + lambda * protect` with respect to the raw head
/// channels (`(4 + C) x cells`, channel-major). Box channels receive zero.
pub(crate) fn objective_raw_grad<T: Real>(
    raw: &[T],
    adv: &PredictionGrid<T>,
    clean_scores: &[T],
    matches: &MatchSet,
    target_class: usize,
    lambda: f64,
) -> Vec<T> {
    let c = adv.num_classes;
    let cells = adv.cells();
    let mut d = vec![T::zero(); raw.len()];
    // d/dz of -ln(1 - sigmoid(z)) is sigmoid(z).
    for &i in matches.per_box.iter().flatten() {
        let s = adv.score(i, target_class);
        if s.as_f64() < SCORE_CLAMP {
            d[(BOX_CHANNELS + target_class) * cells + i] += s;
        }
    }
    let w = lambda / (cells * (c - 1)) as f64;
    for i in 0..cells {
        for k in (0..c).filter(|&k| k != target_class) {
            let s = adv.score(i, k);
            let diff = s - clean_scores[i * c + k];
            let sign = if diff > T::zero() {
                T::one()
            } else if diff < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            d[(BOX_CHANNELS + k) * cells + i] += T::from_f64(w) * sign * s * (T::one() - s);
        }
    }
    d
}
