//! Slow, direct reference implementations used to cross-check the
//! library. Shared by several test targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use cuap_core::detector::Detection;
use cuap_core::geometry::Rect;
use cuap_core::scene::GroundTruthBox;
use num_complex::Complex64;

/// Per-frame windowed DFT by the defining sum, rows in ascending frequency.
pub fn naive_stft(x: &[Complex64], n: usize) -> Vec<Vec<Complex64>> {
    let w: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect();
    let frames = x.len() / n;
    let mut rows = vec![vec![Complex64::new(0.0, 0.0); frames]; n];
    for t in 0..frames {
        for k in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                let theta = -2.0 * PI * ((k * i) % n) as f64 / n as f64;
                acc += x[t * n + i] * w[i] * Complex64::from_polar(1.0, theta);
            }
            rows[(k + n / 2) % n][t] = acc;
        }
    }
    rows
}

fn overlap(a: &Rect, b: &Rect) -> f64 {
    let ix = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let iy = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = ix * iy;
    let area = |r: &Rect| (r.x1 - r.x0).max(0.0) * (r.y1 - r.y0).max(0.0);
    let union = area(a) + area(b) - inter;
    if area(a) <= 0.0 || area(b) <= 0.0 || union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn ranks_before(a: &Detection, b: &Detection) -> bool {
    a.confidence > b.confidence
        || (a.confidence == b.confidence
            && (a.class_id < b.class_id || (a.class_id == b.class_id && a.cell < b.cell)))
}

/// Repeatedly takes the best remaining candidate and removes everything of
/// its class that overlaps it.
pub fn brute_force_nms(cands: &[Detection], conf: f64, iou_thresh: f64) -> Vec<Detection> {
    let mut alive: Vec<Detection> = cands.iter().copied().filter(|d| d.confidence >= conf).collect();
    let mut out = Vec::new();
    while !alive.is_empty() {
        let mut best = 0;
        for i in 1..alive.len() {
            if ranks_before(&alive[i], &alive[best]) {
                best = i;
            }
        }
        let top = alive.remove(best);
        alive.retain(|d| d.class_id != top.class_id || overlap(&d.rect, &top.rect) < iou_thresh);
        out.push(top);
    }
    out
}

/// AP by re-matching every ranked prefix from scratch, then summing, for
/// each recall step `j / G`, the best precision reached at recall `>= j / G`.
pub fn exhaustive_ap(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthBox>],
    class_id: usize,
    iou_thresh: f64,
) -> Option<f64> {
    let g_total: usize = gts.iter().map(|g| g.iter().filter(|b| b.class_id == class_id).count()).sum();
    if g_total == 0 {
        return None;
    }
    let mut ranked: Vec<(usize, Detection)> = Vec::new();
    for (img, ds) in dets.iter().enumerate() {
        for d in ds.iter().filter(|d| d.class_id == class_id) {
            ranked.push((img, *d));
        }
    }
    // Selection sort on (confidence desc, image asc, cell asc).
    for i in 0..ranked.len() {
        let mut best = i;
        for j in i + 1..ranked.len() {
            let (a, b) = (&ranked[j], &ranked[best]);
            let before = a.1.confidence > b.1.confidence
                || (a.1.confidence == b.1.confidence && (a.0 < b.0 || (a.0 == b.0 && a.1.cell < b.1.cell)));
            if before {
                best = j;
            }
        }
        ranked.swap(i, best);
    }
    let mut pr = Vec::new();
    for k in 1..=ranked.len() {
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut tp = 0;
        for (img, d) in &ranked[..k] {
            let mut pick: Option<usize> = None;
            let mut pick_iou = 0.0;
            for (gi, g) in gts[*img].iter().enumerate() {
                if g.class_id != class_id || used[*img][gi] {
                    continue;
                }
                let o = overlap(&d.rect, &g.rect());
                if o >= iou_thresh && (pick.is_none() || o > pick_iou) {
                    pick = Some(gi);
                    pick_iou = o;
                }
            }
            if let Some(gi) = pick {
                used[*img][gi] = true;
                tp += 1;
            }
        }
        pr.push((tp as f64 / g_total as f64, tp as f64 / k as f64));
    }
    let mut ap = 0.0;
    for j in 1..=g_total {
        let level = j as f64 / g_total as f64;
        let best = pr
            .iter()
            .filter(|(r, _)| *r >= level - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0f64, f64::max);
        ap += best / g_total as f64;
    }
    Some(ap)
}

/// Counts boxes of the group with no same-class detection at `iou_thresh`.
pub fn double_loop_mdr(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthBox>],
    group: &[usize],
    iou_thresh: f64,
) -> Option<(usize, usize)> {
    let mut missed = 0;
    let mut total = 0;
    for img in 0..gts.len() {
        for g in &gts[img] {
            if !group.contains(&g.class_id) {
                continue;
            }
            total += 1;
            let mut hit = false;
            for d in &dets[img] {
                if d.class_id == g.class_id && overlap(&d.rect, &g.rect()) >= iou_thresh {
                    hit = true;
                }
            }
            if !hit {
                missed += 1;
            }
        }
    }
    (total > 0).then_some((missed, total))
}
