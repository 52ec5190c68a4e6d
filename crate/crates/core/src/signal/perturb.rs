//! Perturbation tile, tiling with circular offsets, mixing, and the
//! signal-to-perturbation power budget.

use alloc::vec::Vec;

use num_complex::Complex64;

use super::IqBuffer;
use crate::error::{ensure, Error, Result};

/// STFT frames covered by one perturbation tile.
pub const TILE_FRAMES: usize = 64;
/// Samples in one perturbation tile (64 frames of 1024 samples).
pub const TILE_LEN: usize = TILE_FRAMES * super::N_FFT;

pub fn mean_power(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

/// The learned universal perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct CuapTile {
    samples: Vec<Complex64>,
    spr_budget_db: f64,
}

impl CuapTile {
    pub fn new(samples: Vec<Complex64>, spr_budget_db: f64) -> Result<Self> {
        ensure!(
            samples.len() == TILE_LEN,
            "perturbation tile must hold {} samples, got {}",
            TILE_LEN,
            samples.len()
        );
        ensure!(
            samples.iter().all(|s| s.re.is_finite() && s.im.is_finite()),
            "perturbation tile holds non-finite samples"
        );
        ensure!(!spr_budget_db.is_nan(), "SPR budget must not be NaN");
        Ok(Self { samples, spr_budget_db })
    }

    pub fn zeros(spr_budget_db: f64) -> Self {
        Self { samples: alloc::vec![Complex64::new(0.0, 0.0); TILE_LEN], spr_budget_db }
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn spr_budget_db(&self) -> f64 {
        self.spr_budget_db
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn quantize_f32(&mut self) {
        for s in &mut self.samples {
            s.re = s.re as f32 as f64;
            s.im = s.im as f32 as f64;
        }
    }
}

/// `out[n] = in[(n - offset) mod len]`.
pub fn circular_shift(iq: &IqBuffer, offset: usize) -> Result<IqBuffer> {
    ensure!(
        offset < iq.len(),
        "shift offset {} outside [0, {})",
        offset,
        iq.len()
    );
    let mut out = iq.samples().to_vec();
    out.rotate_right(offset);
    Ok(IqBuffer::from_parts_unchecked(out, iq.sample_rate_hz()))
}

/// Repeats the tile to `total_len` samples starting `offset` samples into
/// it: `out[n] = delta[(n + offset) mod TILE_LEN]`.
pub fn tile_perturbation(
    delta: &CuapTile,
    total_len: usize,
    offset: usize,
    sample_rate_hz: f64,
) -> Result<IqBuffer> {
    ensure!(total_len >= 1, "tiled length must be positive");
    ensure!(offset < TILE_LEN, "tile offset {} outside [0, {})", offset, TILE_LEN);
    let out = delta.samples.iter().cycle().skip(offset).take(total_len).copied().collect();
    IqBuffer::new(out, sample_rate_hz)
}

/// Elementwise sum `x_clean + delta_stream`.
pub fn mix(x_clean: &IqBuffer, delta_stream: &IqBuffer) -> Result<IqBuffer> {
    ensure!(
        x_clean.len() == delta_stream.len(),
        "cannot mix buffers of {} and {} samples",
        x_clean.len(),
        delta_stream.len()
    );
    let out = x_clean.samples().iter().zip(delta_stream.samples()).map(|(a, b)| a + b).collect();
    Ok(IqBuffer::from_parts_unchecked(out, x_clean.sample_rate_hz()))
}

/// `10 log10(mean|x|^2 / mean|delta|^2)`.
pub fn spr_db(x_clean: &IqBuffer, delta_stream: &IqBuffer) -> Result<f64> {
    let pd = delta_stream.mean_power();
    if pd <= 0.0 {
        return Err(Error::UndefinedRatio("perturbation power is zero".into()));
    }
    Ok(10.0 * libm::log10(x_clean.mean_power() / pd))
}

const PROJECTION_SLACK: f64 = 1e-12;

/// Scales `delta` down, keeping its shape, until its SPR against
/// `reference_power` is at least `min_spr_db`. A zero tile is returned as is.
pub fn project_spr(delta: &CuapTile, reference_power: f64, min_spr_db: f64) -> Result<CuapTile> {
    ensure!(
        reference_power.is_finite() && reference_power > 0.0,
        "reference power must be positive, got {}",
        reference_power
    );
    ensure!(!min_spr_db.is_nan(), "minimum SPR must not be NaN");
    let mut out = delta.clone();
    out.spr_budget_db = min_spr_db;
    let pd = delta.mean_power();
    if pd == 0.0 {
        return Ok(out);
    }
    let max_power = reference_power * libm::pow(10.0, -min_spr_db / 10.0);
    // The slack keeps a tile that was just projected from being rescaled
    // again by rounding noise.
    if pd > max_power * (1.0 + PROJECTION_SLACK) {
        let scale = libm::sqrt(max_power / pd);
        for s in &mut out.samples {
            *s *= scale;
        }
    }
    Ok(out)
}
