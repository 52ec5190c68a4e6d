//! Random small detection problems.
#![allow(dead_code)]

use cuap_core::detector::Detection;
use cuap_core::geometry::Rect;
use cuap_core::scene::GroundTruthBox;
use rand::Rng;

pub fn random_gt(rng: &mut impl Rng, classes: usize) -> GroundTruthBox {
    let f_lo = rng.random_range(0..180);
    let t_lo = rng.random_range(0..180);
    GroundTruthBox {
        class_id: rng.random_range(0..classes),
        f_lo,
        f_hi: f_lo + rng.random_range(4..30),
        t_lo,
        t_hi: t_lo + rng.random_range(4..30),
    }
}

/// Detections near the ground truth (jittered, some duplicated or with
/// the wrong class) mixed with random clutter. Confidences are coarse so
/// ties occur.
pub fn random_detections(rng: &mut impl Rng, gts: &[GroundTruthBox], classes: usize) -> Vec<Detection> {
    let mut out = Vec::new();
    let mut cell = 0;
    let conf = |rng: &mut dyn rand::RngCore| (rng.random_range(1..20) as f64) * 0.05;
    for g in gts {
        for _ in 0..rng.random_range(0..3) {
            let r = g.rect();
            let j = |rng: &mut dyn rand::RngCore| rng.random_range(-3.0..3.0);
            let class_id = if rng.random_bool(0.85) { g.class_id } else { rng.random_range(0..classes) };
            out.push(Detection {
                rect: Rect::new(r.x0 + j(rng), r.y0 + j(rng), r.x1 + j(rng), r.y1 + j(rng)),
                class_id,
                confidence: conf(rng),
                cell,
            });
            cell += 1;
        }
    }
    for _ in 0..rng.random_range(0..5) {
        let x0 = rng.random_range(0.0..200.0);
        let y0 = rng.random_range(0.0..200.0);
        out.push(Detection {
            rect: Rect::new(x0, y0, x0 + rng.random_range(2.0..30.0), y0 + rng.random_range(2.0..30.0)),
            class_id: rng.random_range(0..classes),
            confidence: conf(rng),
            cell,
        });
        cell += 1;
    }
    out
}

/// Several images of ground truth with their detections.
pub fn random_problem(rng: &mut impl Rng, classes: usize) -> (Vec<Vec<Detection>>, Vec<Vec<GroundTruthBox>>) {
    let images = rng.random_range(1..5);
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..images {
        let g: Vec<_> = (0..rng.random_range(0..7)).map(|_| random_gt(rng, classes)).collect();
        dets.push(random_detections(rng, &g, classes));
        gts.push(g);
    }
    (dets, gts)
}
