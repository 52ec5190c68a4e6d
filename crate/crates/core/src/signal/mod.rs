//! I/Q buffers, the STFT spectrogram front end, and perturbation primitives.

mod fft;
mod perturb;
mod spectrogram;

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{ensure, Result};

pub use fft::Fft;
pub use perturb::{
    circular_shift, mean_power, mix, project_spr, spr_db, tile_perturbation, CuapTile, TILE_FRAMES,
    TILE_LEN,
};
pub use spectrogram::{
    compute_global_range, hann_window, magnitude_db, normalize, normalize_backward, stft,
    magnitude_db_backward, stft_backward, Grid, NormRange, PipelineTrace, RangeMode, Spectrogram, SpectrogramPipeline,
    DEFAULT_EPSILON, N_FFT,
};

/// Desk-scale default complex sample rate.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 10.24e6;

/// Complex baseband samples with their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct IqBuffer {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
}

impl IqBuffer {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        ensure!(!samples.is_empty(), "I/Q buffer must hold at least one sample");
        ensure!(
            sample_rate_hz.is_finite() && sample_rate_hz > 0.0,
            "sample rate must be positive, got {}",
            sample_rate_hz
        );
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(crate::error::invalid!("non-finite sample at index {}", i));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn zeros(len: usize, sample_rate_hz: f64) -> Result<Self> {
        Self::new(alloc::vec![Complex64::new(0.0, 0.0); len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    /// Rounds every component to the nearest `f32`, matching what the
    /// on-disk interleaved float format can hold.
    pub fn quantize_f32(&mut self) {
        for s in &mut self.samples {
            s.re = s.re as f32 as f64;
            s.im = s.im as f32 as f64;
        }
    }

    pub(crate) fn from_parts_unchecked(samples: Vec<Complex64>, sample_rate_hz: f64) -> Self {
        debug_assert!(!samples.is_empty());
        Self { samples, sample_rate_hz }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(IqBuffer::new(vec![], 1.0).is_err());
        assert!(IqBuffer::new(vec![Complex64::new(f64::NAN, 0.0)], 1.0).is_err());
        assert!(IqBuffer::new(vec![Complex64::new(1.0, 0.0)], 0.0).is_err());
        let b = IqBuffer::new(vec![Complex64::new(1.0, 0.0); 3], 1.0).unwrap();
        assert_eq!(b.len(), 3);
    }
}
