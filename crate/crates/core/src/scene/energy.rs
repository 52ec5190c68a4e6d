use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::signal::{stft, IqBuffer, N_FFT};

/// Adaptive threshold: the noise floor is a low percentile of the in-band
/// frame energies and a frame is active when it exceeds the floor by
/// `threshold_db`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDetectorConfig {
    pub threshold_db: f64,
    pub noise_percentile: f64,
    pub min_run: usize,
}

impl Default for EnergyDetectorConfig {
    fn default() -> Self {
        Self { threshold_db: 10.0, noise_percentile: 25.0, min_run: 2 }
    }
}

/// Inclusive frame intervals during which the band `[f_lo_hz, f_hi_hz]`
/// carries energy above the adaptive threshold.
pub fn energy_detect_annotate(
    iq: &IqBuffer,
    band: (f64, f64),
    config: &EnergyDetectorConfig,
) -> Result<Vec<(usize, usize)>> {
    let fs = iq.sample_rate_hz();
    let (f_lo, f_hi) = band;
    ensure!(f_lo < f_hi, "empty band [{}, {}] Hz", f_lo, f_hi);
    ensure!(
        f_lo >= -fs / 2.0 && f_hi <= fs / 2.0,
        "band [{}, {}] Hz exceeds the Nyquist interval",
        f_lo,
        f_hi
    );
    ensure!(
        (0.0..=100.0).contains(&config.noise_percentile),
        "noise percentile {} outside [0, 100]",
        config.noise_percentile
    );
    let grid = stft(iq, N_FFT)?;
    let bin_hz = fs / N_FFT as f64;
    let rows: Vec<usize> = (0..N_FFT)
        .filter(|&r| {
            let f = (r as f64 - (N_FFT / 2) as f64) * bin_hz;
            f >= f_lo && f <= f_hi
        })
        .collect();
    ensure!(!rows.is_empty(), "band [{}, {}] Hz covers no frequency bin", f_lo, f_hi);

    let frames = grid.cols();
    let energy_db: Vec<f64> = (0..frames)
        .map(|t| {
            let e: f64 = rows.iter().map(|&r| grid.get(r, t).norm_sqr()).sum();
            10.0 * libm::log10(e.max(1e-30))
        })
        .collect();
    let mut sorted = energy_db.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = libm::round(config.noise_percentile / 100.0 * (frames - 1) as f64) as usize;
    let threshold = sorted[idx] + config.threshold_db;

    let mut runs = Vec::new();
    let mut start = None;
    for (t, &e) in energy_db.iter().enumerate() {
        match (e > threshold, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                if t - s >= config.min_run.max(1) {
                    runs.push((s, t - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        if frames - s >= config.min_run.max(1) {
            runs.push((s, frames - 1));
        }
    }
    Ok(runs)
}
