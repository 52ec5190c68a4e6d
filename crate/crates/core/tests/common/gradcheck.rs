//! End-to-end derivative check of the attack objective with respect to the
//! perturbation tile.
#![allow(dead_code)]

use cuap_core::attack::{scene_objective, AttackConfig};
use cuap_core::detector::{ArchId, DetectorModel};
use cuap_core::rng::Seed;
use cuap_core::scene::{GroundTruthBox, LabeledScene};
use cuap_core::signal::{CuapTile, IqBuffer, NormRange, SpectrogramPipeline, TILE_LEN};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Probe {
    pub index: usize,
    pub imaginary: bool,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Relative size, against the largest tile derivative, below which a
/// coordinate is not probed.
pub const SIGNIFICANT: f64 = 1e-2;

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * sigma, im * sigma)
}

/// A reduced 128-frame scene with two target boxes aligned to grid cells,
/// a random model, and central differences at `coords` tile coordinates
/// chosen among the largest-gradient samples and at random.
pub fn run(coords: usize, seed: u64) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = 128 * 1024;
    let iq: Vec<Complex64> = (0..len).map(|_| gaussian(&mut rng, 1.0)).collect();
    let scene = LabeledScene {
        iq: IqBuffer::new(iq, 10.24e6).unwrap(),
        boxes: vec![
            GroundTruthBox { class_id: 0, f_lo: 64, f_hi: 127, t_lo: 0, t_hi: 63 },
            GroundTruthBox { class_id: 0, f_lo: 512, f_hi: 575, t_lo: 64, t_hi: 127 },
            GroundTruthBox { class_id: 2, f_lo: 256, f_hi: 319, t_lo: 64, t_hi: 127 },
        ],
    };
    let pipeline = SpectrogramPipeline::new(NormRange::new(-20.0, 50.0).unwrap());
    let model = DetectorModel::new(ArchId::A, 4, Seed(seed)).unwrap();
    let clean_input = pipeline.spectrogram(&scene.iq).unwrap().to_pseudo_rgb::<f64>();
    let clean_scores = model.forward(&clean_input).unwrap().scores;
    let tile = CuapTile::new((0..TILE_LEN).map(|_| gaussian(&mut rng, 0.3)).collect(), 10.0).unwrap();
    let config = AttackConfig::default();
    let offset = rng.random_range(0..TILE_LEN);
    let objective = |t: &CuapTile| {
        scene_objective::<f64>(&pipeline, &model, &scene, &clean_scores, t, offset, &config, false)
            .unwrap()
            .0
            .total
    };
    let (parts, grad) =
        scene_objective::<f64>(&pipeline, &model, &scene, &clean_scores, &tile, offset, &config, true).unwrap();
    assert!(parts.evade > 0.0, "the check needs matched target predictions");
    let grad = grad.unwrap();

    // Coordinates whose derivative is too small to resolve by differencing
    // an O(1) objective are excluded.
    let peak = grad.iter().map(|g| g.re.abs().max(g.im.abs())).fold(0.0f64, f64::max);
    let mut picks: Vec<(usize, bool)> = Vec::new();
    let mut by_size: Vec<usize> = (0..TILE_LEN).collect();
    by_size.sort_by(|&a, &b| grad[b].norm().partial_cmp(&grad[a].norm()).unwrap());
    for &i in by_size.iter().take(coords / 2) {
        picks.push((i, grad[i].im.abs() > grad[i].re.abs()));
    }
    while picks.len() < coords {
        let i = rng.random_range(0..TILE_LEN);
        let imaginary = rng.random_bool(0.5);
        let g = if imaginary { grad[i].im } else { grad[i].re };
        if g.abs() >= SIGNIFICANT * peak && !picks.contains(&(i, imaginary)) {
            picks.push((i, imaginary));
        }
    }

    let h = 1e-5;
    picks
        .into_iter()
        .map(|(index, imaginary)| {
            let bump = if imaginary { Complex64::new(0.0, h) } else { Complex64::new(h, 0.0) };
            let mut plus = tile.clone();
            plus.samples_mut()[index] += bump;
            let mut minus = tile.clone();
            minus.samples_mut()[index] -= bump;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let analytic = if imaginary { grad[index].im } else { grad[index].re };
            Probe { index, imaginary, analytic, numeric }
        })
        .collect()
}
