use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::model::PredictionGrid;
use crate::geometry::{iou, Rect};
use crate::tensor::Real;

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.4;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub rect: Rect,
    pub class_id: usize,
    pub confidence: f64,
    /// Grid cell the box came from.
    pub cell: usize,
}

/// Orders by confidence descending, then class, then cell index.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(Ordering::Equal)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.cell.cmp(&b.cell))
}

/// Every (cell, class) pair of the grid as an unsuppressed detection.
pub fn grid_candidates<T: Real>(preds: &PredictionGrid<T>) -> Vec<Detection> {
    let mut out = Vec::with_capacity(preds.scores.len());
    for cell in 0..preds.cells() {
        let rect = preds.rect(cell);
        for class_id in 0..preds.num_classes {
            out.push(Detection { rect, class_id, confidence: preds.score(cell, class_id).as_f64(), cell });
        }
    }
    out
}

/// Per-class greedy suppression over an arbitrary candidate list. The
/// result does not depend on the order of `candidates`.
pub fn nms_candidates(candidates: &[Detection], conf_thresh: f64, iou_thresh: f64) -> Vec<Detection> {
    let mut pool: Vec<Detection> =
        candidates.iter().copied().filter(|d| d.confidence >= conf_thresh).collect();
    pool.sort_by(detection_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in pool {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.rect, &d.rect) >= iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

pub fn nms<T: Real>(preds: &PredictionGrid<T>, conf_thresh: f64, iou_thresh: f64) -> Vec<Detection> {
    nms_candidates(&grid_candidates(preds), conf_thresh, iou_thresh)
}
