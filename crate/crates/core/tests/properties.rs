mod common;

use common::instances::random_problem;
use cuap_core::attack::apply_attack;
use cuap_core::detector::nms_candidates;
use cuap_core::eval::{average_precision, mdr};
use cuap_core::signal::{project_spr, stft, tile_perturbation, CuapTile, IqBuffer, TILE_LEN};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_samples(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))).collect()
}

fn random_tile(rng: &mut ChaCha8Rng, scale: f64) -> CuapTile {
    CuapTile::new(random_samples(rng, TILE_LEN, scale), 10.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stft_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_samples(&mut rng, 256, 1.0);
        let y = random_samples(&mut rng, 256, 1.0);
        let z: Vec<_> = x.iter().zip(&y).map(|(p, q)| p * a + q * b).collect();
        let sx = stft(&IqBuffer::new(x, 1.0).unwrap(), 64).unwrap();
        let sy = stft(&IqBuffer::new(y, 1.0).unwrap(), 64).unwrap();
        let sz = stft(&IqBuffer::new(z, 1.0).unwrap(), 64).unwrap();
        for ((p, q), r) in sx.data().iter().zip(sy.data()).zip(sz.data()) {
            prop_assert!((p * a + q * b - r).norm() <= 1e-9 * (1.0 + r.norm()));
        }
    }

    #[test]
    fn tiling_offsets_are_periodic(seed in any::<u64>(), offset in 0usize..TILE_LEN, len in 1usize..200_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tile = random_tile(&mut rng, 1.0);
        let s = tile_perturbation(&tile, len, offset, 1.0).unwrap();
        for n in [0, len / 3, len - 1] {
            prop_assert_eq!(s.samples()[n], tile.samples()[(n + offset) % TILE_LEN]);
        }
    }

    #[test]
    fn projection_meets_budget_and_keeps_direction(
        seed in any::<u64>(), scale in 0.01f64..10.0, reference in 0.1f64..10.0, spr in -5.0f64..30.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tile = random_tile(&mut rng, scale);
        let p = project_spr(&tile, reference, spr).unwrap();
        let achieved = 10.0 * (reference / p.mean_power()).log10();
        prop_assert!(achieved >= spr - 1e-9);
        prop_assert!(p.mean_power() <= reference * 10f64.powf(-spr / 10.0) * (1.0 + 1e-9));
        let again = project_spr(&p, reference, spr).unwrap();
        prop_assert_eq!(again.samples(), p.samples());
        // Same direction: p = c * tile with 0 < c <= 1.
        let c = p.samples()[0].re / tile.samples()[0].re;
        prop_assert!(c > 0.0 && c <= 1.0 + 1e-12);
        for (a, b) in p.samples().iter().zip(tile.samples()).step_by(997) {
            prop_assert!((a - b * c).norm() <= 1e-9 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn attacked_power_obeys_cauchy_schwarz(seed in any::<u64>(), offset in 0usize..TILE_LEN) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = IqBuffer::new(random_samples(&mut rng, 3 * TILE_LEN / 2, 1.0), 1.0).unwrap();
        let tile = project_spr(&random_tile(&mut rng, 1.0), x.mean_power(), 10.0).unwrap();
        let y = apply_attack(&x, &tile, offset).unwrap();
        let stream = tile_perturbation(&tile, x.len(), offset, 1.0).unwrap();
        let bound = (x.mean_power().sqrt() + stream.mean_power().sqrt()).powi(2);
        prop_assert!(y.mean_power() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn nms_ignores_candidate_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // One image: (class, cell) pairs are unique, as on a prediction grid.
        let (dets, _) = random_problem(&mut rng, 3);
        let mut flat = dets[0].clone();
        let reference = nms_candidates(&flat, 0.4, 0.5);
        flat.shuffle(&mut rng);
        prop_assert_eq!(nms_candidates(&flat, 0.4, 0.5), reference);
    }

    #[test]
    fn ap_bounded_and_consistent_with_mdr(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, gts) = random_problem(&mut rng, 3);
        for class in 0..3 {
            if let Some(ap) = average_precision(&dets, &gts, class, 0.5) {
                prop_assert!((0.0..=1.0).contains(&ap.ap));
                prop_assert!(ap.curve.windows(2).all(|w| w[0].recall <= w[1].recall));
                if ap.ap == 1.0 {
                    prop_assert_eq!(mdr(&dets, &gts, &[class], 0.5).unwrap().missed, 0);
                }
            }
        }
    }
}

#[test]
fn zero_tile_leaves_scene_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = IqBuffer::new(random_samples(&mut rng, 4096, 1.0), 1.0).unwrap();
    let y = apply_attack(&x, &CuapTile::zeros(10.0), 17).unwrap();
    assert_eq!(x, y);
}
