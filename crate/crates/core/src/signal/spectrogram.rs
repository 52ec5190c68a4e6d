//! Hann-windowed, non-overlapping STFT followed by dB conversion and clipping
//! to a fixed global range.
//!
//! Grids are stored row-major with rows indexing frequency in ascending order
//! (row `r` holds frequency `(r - n/2) * fs / n`) and columns indexing frames.
//! The forward DFT uses the negative exponent and no `1/N` scaling.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{LN_10, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::Fft;
use super::IqBuffer;
use crate::error::{ensure, Result};
use crate::tensor::{Real, Tensor};

/// Frequency bins (and samples per frame) of the detector front end.
pub const N_FFT: usize = 1024;
/// Guard added to `|S|` before the logarithm; floor of -120 dB.
pub const DEFAULT_EPSILON: f64 = 1e-12;
/// Magnitudes below this have a zero subgradient.
const MAG_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            "grid {}x{} needs {} values, got {}",
            rows,
            cols,
            rows * cols,
            data.len()
        );
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Symmetric Hann window, `w[k] = 0.5 (1 - cos(2 pi k / (n - 1)))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    ensure!(n >= 2, "Hann window needs at least 2 points, got {}", n);
    let denom = (n - 1) as f64;
    Ok((0..n).map(|k| 0.5 * (1.0 - libm::cos(2.0 * PI * k as f64 / denom))).collect())
}

#[inline]
fn bin_of_row(row: usize, n: usize) -> usize {
    (row + n / 2) % n
}

/// Non-overlapping STFT with hop equal to `n_fft`. Trailing samples that do
/// not fill a whole frame are dropped.
pub fn stft(iq: &IqBuffer, n_fft: usize) -> Result<Grid<Complex64>> {
    ensure!(
        iq.len() >= n_fft,
        "I/Q buffer of {} samples is shorter than one {}-point frame",
        iq.len(),
        n_fft
    );
    let fft = Fft::new(n_fft)?;
    let window = hann_window(n_fft)?;
    let frames = iq.len() / n_fft;
    let mut grid = Grid::filled(n_fft, frames, Complex64::new(0.0, 0.0));
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let frame = &iq.samples()[t * n_fft..(t + 1) * n_fft];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = x * w;
        }
        fft.forward(&mut buf);
        for r in 0..n_fft {
            grid.data[r * frames + t] = buf[bin_of_row(r, n_fft)];
        }
    }
    Ok(grid)
}

/// Gradient of a real loss with respect to the STFT input samples, given the
/// gradient with respect to each coefficient (`dL/dRe + j dL/dIm`). Samples
/// past the last whole frame receive zero gradient.
pub fn stft_backward(grad: &Grid<Complex64>, input_len: usize) -> Result<Vec<Complex64>> {
    let n_fft = grad.rows;
    let frames = grad.cols;
    ensure!(
        frames * n_fft <= input_len,
        "gradient covers {} frames but input has only {} samples",
        frames,
        input_len
    );
    let fft = Fft::new(n_fft)?;
    let window = hann_window(n_fft)?;
    let mut out = vec![Complex64::new(0.0, 0.0); input_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        for r in 0..n_fft {
            buf[bin_of_row(r, n_fft)] = grad.data[r * frames + t];
        }
        fft.adjoint(&mut buf);
        for ((o, &g), &w) in out[t * n_fft..(t + 1) * n_fft].iter_mut().zip(&buf).zip(&window) {
            *o = g * w;
        }
    }
    Ok(out)
}

/// `10 log10(|S| + epsilon)` elementwise.
pub fn magnitude_db(s: &Grid<Complex64>, epsilon: f64) -> Result<Grid<f64>> {
    ensure!(epsilon > 0.0 && epsilon.is_finite(), "epsilon must be positive, got {}", epsilon);
    Ok(s.map(|v| 10.0 * libm::log10(v.norm() + epsilon)))
}

pub fn magnitude_db_backward(
    s: &Grid<Complex64>,
    epsilon: f64,
    grad_db: &Grid<f64>,
) -> Result<Grid<Complex64>> {
    ensure!(
        s.rows == grad_db.rows && s.cols == grad_db.cols,
        "gradient shape {}x{} does not match STFT {}x{}",
        grad_db.rows,
        grad_db.cols,
        s.rows,
        s.cols
    );
    let data = s
        .data
        .iter()
        .zip(&grad_db.data)
        .map(|(&v, &g)| {
            let mag = v.norm();
            if mag < MAG_FLOOR || g == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                v * (g * 10.0 / (LN_10 * (mag + epsilon)) / mag)
            }
        })
        .collect();
    Ok(Grid { rows: s.rows, cols: s.cols, data })
}

/// Global dB clipping range `[m_min_db, m_max_db]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRange {
    pub m_min_db: f64,
    pub m_max_db: f64,
}

impl NormRange {
    pub fn new(m_min_db: f64, m_max_db: f64) -> Result<Self> {
        let r = Self { m_min_db, m_max_db };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.m_min_db.is_finite() && self.m_max_db.is_finite() && self.m_min_db < self.m_max_db,
            "degenerate normalization range [{}, {}]",
            self.m_min_db,
            self.m_max_db
        );
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.m_max_db - self.m_min_db
    }
}

/// Normalized spectrogram in `[0, 1]`, rows = frequency, columns = frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Grid<f64>,
    norm_range: NormRange,
}

impl Spectrogram {
    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn norm_range(&self) -> NormRange {
        self.norm_range
    }

    pub fn f_bins(&self) -> usize {
        self.values.rows
    }

    pub fn t_frames(&self) -> usize {
        self.values.cols
    }

    /// Stacks the single channel three times into a `3 x F x T` tensor.
    pub fn to_pseudo_rgb<T: Real>(&self) -> Tensor<T> {
        let plane: Vec<T> = self.values.data.iter().map(|&v| T::from_f64(v)).collect();
        let mut data = Vec::with_capacity(plane.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        Tensor::from_vec(&[3, self.values.rows, self.values.cols], data)
            .expect("plane length matches grid shape")
    }
}

/// Clips to the range and maps linearly onto `[0, 1]`.
pub fn normalize(m: &Grid<f64>, range: NormRange) -> Result<Spectrogram> {
    range.validate()?;
    let span = range.span();
    let values = m.map(|v| (v.clamp(range.m_min_db, range.m_max_db) - range.m_min_db) / span);
    Ok(Spectrogram { values, norm_range: range })
}

/// Subgradient of [`normalize`]: `1/span` inside the closed range, zero
/// outside it.
pub fn normalize_backward(m: &Grid<f64>, range: NormRange, grad: &Grid<f64>) -> Result<Grid<f64>> {
    range.validate()?;
    ensure!(
        m.rows == grad.rows && m.cols == grad.cols,
        "gradient shape {}x{} does not match grid {}x{}",
        grad.rows,
        grad.cols,
        m.rows,
        m.cols
    );
    let inv = 1.0 / range.span();
    let data = m
        .data
        .iter()
        .zip(&grad.data)
        .map(|(&v, &g)| if v >= range.m_min_db && v <= range.m_max_db { g * inv } else { 0.0 })
        .collect();
    Ok(Grid { rows: m.rows, cols: m.cols, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RangeMode {
    /// Exact extrema over every value.
    MinMax,
    /// Linearly interpolated percentiles, e.g. `low = 1.0, high = 99.0`.
    Percentile { low: f64, high: f64 },
}

/// Global dB range over a set of grids.
pub fn compute_global_range<'a, I>(grids: I, mode: RangeMode) -> Result<NormRange>
where
    I: IntoIterator<Item = &'a Grid<f64>>,
{
    match mode {
        RangeMode::MinMax => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut any = false;
            for g in grids {
                for &v in &g.data {
                    any = true;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            ensure!(any, "cannot compute a range over an empty set");
            NormRange::new(lo, hi)
        }
        RangeMode::Percentile { low, high } => {
            ensure!(
                (0.0..=100.0).contains(&low) && (0.0..=100.0).contains(&high) && low < high,
                "invalid percentiles {}/{}",
                low,
                high
            );
            let mut pooled: Vec<f64> = grids.into_iter().flat_map(|g| g.data.iter().copied()).collect();
            ensure!(!pooled.is_empty(), "cannot compute a range over an empty set");
            let lo = percentile_in_place(&mut pooled, low);
            let hi = percentile_in_place(&mut pooled, high);
            NormRange::new(lo, hi)
        }
    }
}

fn percentile_in_place(values: &mut [f64], p: f64) -> f64 {
    let pos = p / 100.0 * (values.len() - 1) as f64;
    let below = libm::floor(pos) as usize;
    let frac = pos - below as f64;
    let (_, &mut a, rest) = values.select_nth_unstable_by(below, f64::total_cmp);
    if frac == 0.0 || rest.is_empty() {
        return a;
    }
    let b = rest.iter().copied().fold(f64::INFINITY, f64::min);
    a + frac * (b - a)
}

/// The full I/Q to spectrogram front end with a fixed normalization range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramPipeline {
    pub n_fft: usize,
    pub epsilon: f64,
    pub norm_range: NormRange,
}

/// Intermediates kept by [`SpectrogramPipeline::forward_traced`].
#[derive(Debug, Clone)]
pub struct PipelineTrace {
    coefficients: Grid<Complex64>,
    db: Grid<f64>,
    input_len: usize,
}

impl PipelineTrace {
    pub fn db(&self) -> &Grid<f64> {
        &self.db
    }

    pub fn coefficients(&self) -> &Grid<Complex64> {
        &self.coefficients
    }
}

impl SpectrogramPipeline {
    pub fn new(norm_range: NormRange) -> Self {
        Self { n_fft: N_FFT, epsilon: DEFAULT_EPSILON, norm_range }
    }

    pub fn db_grid(&self, iq: &IqBuffer) -> Result<Grid<f64>> {
        magnitude_db(&stft(iq, self.n_fft)?, self.epsilon)
    }

    pub fn spectrogram(&self, iq: &IqBuffer) -> Result<Spectrogram> {
        normalize(&self.db_grid(iq)?, self.norm_range)
    }

    pub fn forward_traced(&self, iq: &IqBuffer) -> Result<(Spectrogram, PipelineTrace)> {
        let coefficients = stft(iq, self.n_fft)?;
        let db = magnitude_db(&coefficients, self.epsilon)?;
        let spec = normalize(&db, self.norm_range)?;
        Ok((spec, PipelineTrace { coefficients, db, input_len: iq.len() }))
    }

    /// Gradient with respect to the input I/Q samples, given the gradient
    /// with respect to the normalized spectrogram.
    pub fn backward(&self, trace: &PipelineTrace, grad: &Grid<f64>) -> Result<Vec<Complex64>> {
        let g_db = normalize_backward(&trace.db, self.norm_range, grad)?;
        let g_s = magnitude_db_backward(&trace.coefficients, self.epsilon, &g_db)?;
        stft_backward(&g_s, trace.input_len)
    }
}
