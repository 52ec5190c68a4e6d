use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::geometry::iou;
use crate::scene::GroundTruthBox;

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub ap: f64,
    pub num_gt: usize,
    pub num_det: usize,
    pub curve: Vec<PrPoint>,
}

/// Per-class AP over a set of images. Classes without ground truth are
/// absent rather than scored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ApReport {
    pub classes: Vec<ClassAp>,
}

impl ApReport {
    pub fn evaluate(
        dets: &[Vec<Detection>],
        gts: &[Vec<GroundTruthBox>],
        num_classes: usize,
        iou_thresh: f64,
    ) -> Self {
        let classes = (0..num_classes)
            .filter_map(|c| average_precision(dets, gts, c, iou_thresh))
            .collect();
        Self { classes }
    }

    pub fn ap(&self, class_id: usize) -> Option<f64> {
        self.classes.iter().find(|c| c.class_id == class_id).map(|c| c.ap)
    }

    /// Mean AP over the listed classes that have ground truth.
    pub fn mean_ap(&self, class_ids: &[usize]) -> Option<f64> {
        let aps: Vec<f64> = class_ids.iter().filter_map(|&c| self.ap(c)).collect();
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }

    /// Mean AP over every class except `target`.
    pub fn non_target_map(&self, target: usize) -> Option<f64> {
        let ids: Vec<usize> = self.classes.iter().map(|c| c.class_id).filter(|&c| c != target).collect();
        self.mean_ap(&ids)
    }
}

/// Greedy matching in descending confidence (ties by image, then cell);
/// each detection takes the best-overlapping unmatched ground truth of its
/// class (ties by lower index). AP integrates the monotone precision
/// envelope over all recall steps.
pub fn average_precision(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthBox>],
    class_id: usize,
    iou_thresh: f64,
) -> Option<ClassAp> {
    assert_eq!(dets.len(), gts.len(), "one detection list per image");
    let num_gt: usize = gts.iter().map(|g| g.iter().filter(|b| b.class_id == class_id).count()).sum();
    if num_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(usize, &Detection)> = dets
        .iter()
        .enumerate()
        .flat_map(|(img, ds)| ds.iter().filter(|d| d.class_id == class_id).map(move |d| (img, d)))
        .collect();
    ranked.sort_by(|(ia, a), (ib, b)| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(Ordering::Equal)
            .then(ia.cmp(ib))
            .then(a.cell.cmp(&b.cell))
    });
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(ranked.len());
    for (k, (img, d)) in ranked.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts[*img].iter().enumerate() {
            if g.class_id != class_id || taken[*img][gi] {
                continue;
            }
            let o = iou(&d.rect, &g.rect());
            if o >= iou_thresh && best.is_none_or(|(_, b)| o > b) {
                best = Some((gi, o));
            }
        }
        if let Some((gi, _)) = best {
            taken[*img][gi] = true;
            tp += 1;
        }
        curve.push(PrPoint { recall: tp as f64 / num_gt as f64, precision: tp as f64 / (k + 1) as f64 });
    }
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    Some(ClassAp { class_id, ap, num_gt, num_det: ranked.len(), curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdrEntry {
    pub classes: Vec<usize>,
    pub missed: usize,
    pub total: usize,
    pub mdr: f64,
}

/// Missed-detection rate over a pooled class group: a box is missed when
/// no detection of its class overlaps it at `iou_thresh` or more.
/// Detections are taken as already thresholded and suppressed.
pub fn mdr(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthBox>],
    group: &[usize],
    iou_thresh: f64,
) -> Option<MdrEntry> {
    assert_eq!(dets.len(), gts.len(), "one detection list per image");
    let (mut missed, mut total) = (0, 0);
    for (ds, gs) in dets.iter().zip(gts) {
        for g in gs.iter().filter(|g| group.contains(&g.class_id)) {
            total += 1;
            let r = g.rect();
            if !ds.iter().any(|d| d.class_id == g.class_id && iou(&d.rect, &r) >= iou_thresh) {
                missed += 1;
            }
        }
    }
    (total > 0).then(|| MdrEntry {
        classes: group.to_vec(),
        missed,
        total,
        mdr: missed as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;

    fn gt(class_id: usize, f: usize, t: usize) -> GroundTruthBox {
        GroundTruthBox { class_id, f_lo: f, f_hi: f + 9, t_lo: t, t_hi: t + 9 }
    }

    fn det_on(g: &GroundTruthBox, confidence: f64, cell: usize) -> Detection {
        Detection { rect: g.rect(), class_id: g.class_id, confidence, cell }
    }

    fn far(class_id: usize, confidence: f64, cell: usize) -> Detection {
        Detection { rect: Rect::new(500.0, 500.0, 510.0, 510.0), class_id, confidence, cell }
    }

    #[test]
    fn perfect_detections_score_one() {
        let g = vec![gt(0, 0, 0), gt(0, 50, 50)];
        let d = vec![det_on(&g[0], 0.9, 0), det_on(&g[1], 0.9, 1)];
        let ap = average_precision(&[d], &[g], 0, 0.5).unwrap();
        assert_eq!(ap.ap, 1.0);
    }

    #[test]
    fn no_detections_score_zero_and_no_gt_is_absent() {
        let g = vec![gt(0, 0, 0)];
        assert_eq!(average_precision(&[vec![]], &[g.clone()], 0, 0.5).unwrap().ap, 0.0);
        assert!(average_precision(&[vec![]], &[g], 1, 0.5).is_none());
    }

    #[test]
    fn ranking_of_false_positive_matters() {
        let g = vec![gt(0, 0, 0)];
        let good = vec![det_on(&g[0], 0.9, 0), far(0, 0.8, 1)];
        let bad = vec![far(0, 0.9, 0), det_on(&g[0], 0.8, 1)];
        assert_eq!(average_precision(&[good], &[g.clone()], 0, 0.5).unwrap().ap, 1.0);
        assert_eq!(average_precision(&[bad], &[g], 0, 0.5).unwrap().ap, 0.5);
    }

    #[test]
    fn duplicate_detection_is_a_false_positive() {
        let g = vec![gt(0, 0, 0), gt(0, 100, 100)];
        let d = vec![det_on(&g[0], 0.9, 0), det_on(&g[0], 0.8, 1), det_on(&g[1], 0.7, 2)];
        // TP, FP, TP: recall 0.5 at p=1, recall 1 at p=2/3.
        let ap = average_precision(&[d], &[g], 0, 0.5).unwrap().ap;
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn mdr_counts_covered_boxes() {
        let g: Vec<_> = (0..10).map(|i| gt(1, 20 * i, 0)).collect();
        let d: Vec<_> = g.iter().take(8).enumerate().map(|(i, b)| det_on(b, 0.9, i)).collect();
        let m = mdr(&[d], &[g.clone()], &[1], 0.5).unwrap();
        assert_eq!((m.missed, m.total), (2, 10));
        assert!((m.mdr - 0.2).abs() < 1e-15);
        assert_eq!(mdr(&[vec![]], &[g.clone()], &[1], 0.5).unwrap().mdr, 1.0);
        assert!(mdr(&[vec![]], &[g], &[0, 2], 0.5).is_none());
    }

    #[test]
    fn wrong_class_does_not_cover() {
        let g = vec![gt(1, 0, 0)];
        let mut d = det_on(&g[0], 0.9, 0);
        d.class_id = 2;
        assert_eq!(mdr(&[vec![d]], &[g], &[1, 2], 0.5).unwrap().missed, 1);
    }
}
