use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EmitterProfile, GroundTruthBox, SceneProvenance, SceneRecord, SpectralShape};
use crate::error::{ensure, Error, Result};
use crate::rng::{Seed, StreamRng};
use crate::signal::{Fft, IqBuffer, N_FFT};

/// Sub-carrier count per OFDM-like symbol and samples per chirp sweep.
const SYMBOL_LEN: usize = 256;

/// Sample interval `[start, end)` of one burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurstExtent {
    pub start: usize,
    pub end: usize,
}

/// One emitter inside a scene: profile, carrier offset, and the sample at
/// which its first burst starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterPlacement {
    pub profile: EmitterProfile,
    pub cfo_hz: f64,
    pub start_offset: usize,
}

fn gaussian(rng: &mut StreamRng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn signed_freq(bin: usize, n: usize, fs: f64) -> f64 {
    let k = if bin < n / 2 { bin as f64 } else { bin as f64 - n as f64 };
    k * fs / n as f64
}

fn burst_waveform(profile: &EmitterProfile, len: usize, fs: f64, rng: &mut StreamRng) -> Vec<Complex64> {
    let half_bw = profile.bandwidth_hz / 2.0;
    let mut out = Vec::with_capacity(len);
    match profile.spectral_shape {
        SpectralShape::FlatNoise => {
            let fft = Fft::new(N_FFT).expect("power of two");
            let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];
            while out.len() < len {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = if signed_freq(k, N_FFT, fs).abs() <= half_bw {
                        gaussian(rng)
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                }
                fft.adjoint(&mut buf);
                let take = (len - out.len()).min(N_FFT);
                out.extend_from_slice(&buf[..take]);
            }
        }
        SpectralShape::OfdmLike => {
            let fft = Fft::new(SYMBOL_LEN).expect("power of two");
            let mut buf = vec![Complex64::new(0.0, 0.0); SYMBOL_LEN];
            let qpsk = |b: u32| {
                let s = core::f64::consts::FRAC_1_SQRT_2;
                Complex64::new(if b & 1 == 0 { s } else { -s }, if b & 2 == 0 { s } else { -s })
            };
            while out.len() < len {
                for (k, b) in buf.iter_mut().enumerate() {
                    let f = signed_freq(k, SYMBOL_LEN, fs);
                    *b = if k != 0 && f.abs() <= half_bw {
                        qpsk(rng.random::<u32>())
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                }
                fft.adjoint(&mut buf);
                let take = (len - out.len()).min(SYMBOL_LEN);
                out.extend_from_slice(&buf[..take]);
            }
        }
        SpectralShape::Chirp => {
            let mut phase = rng.random::<f64>() * 2.0 * PI;
            for n in 0..len {
                let frac = (n % SYMBOL_LEN) as f64 / SYMBOL_LEN as f64;
                let f = -half_bw + profile.bandwidth_hz * frac;
                out.push(Complex64::new(libm::cos(phase), libm::sin(phase)));
                phase = (phase + 2.0 * PI * f / fs) % (2.0 * PI);
            }
        }
    }
    let p = crate::signal::mean_power(&out);
    let scale = if p > 0.0 { libm::sqrt(profile.power_scale / p) } else { 0.0 };
    for s in &mut out {
        *s *= scale;
    }
    out
}

/// Bursts at `lead_in + m * period` for every burst that fits entirely in
/// `n` samples.
fn render_bursts(
    profile: &EmitterProfile,
    n: usize,
    lead_in: usize,
    fs: f64,
    rng: &mut StreamRng,
) -> (Vec<Complex64>, Vec<BurstExtent>) {
    let burst_len = libm::round(profile.burst_duration_s * fs) as usize;
    let period_len = (libm::round(profile.burst_period_s * fs) as usize).max(burst_len).max(1);
    let mut samples = vec![Complex64::new(0.0, 0.0); n];
    let mut bursts = Vec::new();
    let mut start = lead_in;
    while start + burst_len <= n {
        let wave = burst_waveform(profile, burst_len, fs, rng);
        samples[start..start + burst_len].copy_from_slice(&wave);
        bursts.push(BurstExtent { start, end: start + burst_len });
        start += period_len;
    }
    (samples, bursts)
}

/// Periodic bursts of one emitter at baseband, first burst at sample zero.
pub fn synth_emitter(
    profile: &EmitterProfile,
    duration_s: f64,
    sample_rate_hz: f64,
    seed: Seed,
) -> Result<(IqBuffer, Vec<BurstExtent>)> {
    profile.validate(sample_rate_hz)?;
    ensure!(
        duration_s + 1e-12 >= profile.burst_period_s,
        "duration {} s does not cover one burst period of {} s",
        duration_s,
        profile.burst_period_s
    );
    let n = libm::round(duration_s * sample_rate_hz) as usize;
    let (samples, bursts) = render_bursts(profile, n, 0, sample_rate_hz, &mut seed.rng());
    Ok((IqBuffer::new(samples, sample_rate_hz)?, bursts))
}

/// Frequency translation `out[n] = in[n] exp(j 2 pi df n / fs)`. The shifted
/// occupied band must stay inside the Nyquist interval.
pub fn apply_cfo(iq: &IqBuffer, delta_f_hz: f64, occupied_bandwidth_hz: f64) -> Result<IqBuffer> {
    let fs = iq.sample_rate_hz();
    ensure!(
        delta_f_hz.abs() + occupied_bandwidth_hz / 2.0 < fs / 2.0,
        "carrier offset {} Hz would alias a {} Hz wide band at {} Hz sampling",
        delta_f_hz,
        occupied_bandwidth_hz,
        fs
    );
    if delta_f_hz == 0.0 {
        return Ok(iq.clone());
    }
    let step = delta_f_hz / fs;
    let out = iq
        .samples()
        .iter()
        .enumerate()
        .map(|(n, &x)| {
            let cycles = step * n as f64;
            let theta = 2.0 * PI * (cycles - libm::floor(cycles));
            x * Complex64::new(libm::cos(theta), libm::sin(theta))
        })
        .collect();
    IqBuffer::new(out, fs)
}

/// Adds circular complex Gaussian noise at `snr_db` relative to the mean
/// power of `iq`. An infinite SNR returns the input unchanged.
pub fn add_awgn(iq: &IqBuffer, snr_db: f64, seed: Seed) -> Result<IqBuffer> {
    ensure!(!snr_db.is_nan(), "SNR must not be NaN");
    if snr_db == f64::INFINITY {
        return Ok(iq.clone());
    }
    let p = iq.mean_power();
    ensure!(p > 0.0, "cannot set an SNR against a zero-power signal");
    add_noise_power(iq, p * libm::pow(10.0, -snr_db / 10.0), seed)
}

/// Adds circular complex Gaussian noise of the given per-sample power.
pub fn add_noise_power(iq: &IqBuffer, noise_power: f64, seed: Seed) -> Result<IqBuffer> {
    ensure!(noise_power >= 0.0 && noise_power.is_finite(), "noise power must be finite and non-negative");
    let sigma = libm::sqrt(noise_power / 2.0);
    let mut rng = seed.rng();
    let out = iq.samples().iter().map(|&x| x + gaussian(&mut rng) * sigma).collect();
    IqBuffer::new(out, iq.sample_rate_hz())
}

const SYNTH_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Spectrogram box of one burst: the nominal band `cfo +- B/2` and the frames
/// that the burst covers for at least half their length.
pub(crate) fn burst_box(
    profile: &EmitterProfile,
    cfo_hz: f64,
    burst: BurstExtent,
    fs: f64,
    frames: usize,
) -> GroundTruthBox {
    let bin_hz = fs / N_FFT as f64;
    let half = N_FFT as f64 / 2.0;
    let lo = libm::ceil((cfo_hz - profile.bandwidth_hz / 2.0) / bin_hz - 1e-9) + half;
    let hi = libm::floor((cfo_hz + profile.bandwidth_hz / 2.0) / bin_hz + 1e-9) + half;
    let f_lo = lo.clamp(0.0, (N_FFT - 1) as f64) as usize;
    let f_hi = hi.clamp(0.0, (N_FFT - 1) as f64) as usize;
    let frame = N_FFT as f64;
    let t_lo = libm::round(burst.start as f64 / frame) as usize;
    let t_end = libm::round(burst.end as f64 / frame) as usize;
    let t_hi = t_end.saturating_sub(1).max(t_lo).min(frames.saturating_sub(1));
    GroundTruthBox { class_id: profile.class_id, f_lo, f_hi, t_lo: t_lo.min(t_hi), t_hi }
}

/// Sums the emitters at their carrier offsets, adds noise at `snr_db` (none
/// when `None`), and annotates every burst.
pub fn mix_scene(
    placements: &[EmitterPlacement],
    len_samples: usize,
    sample_rate_hz: f64,
    snr_db: Option<f64>,
    seed: Seed,
) -> Result<SceneRecord> {
    ensure!(!placements.is_empty(), "a scene needs at least one emitter");
    ensure!(len_samples >= N_FFT, "scene of {} samples is shorter than one frame", len_samples);
    for (i, p) in placements.iter().enumerate() {
        p.profile.validate(sample_rate_hz)?;
        ensure!(
            p.start_offset < len_samples,
            "emitter {} starts at sample {} beyond the scene length {}",
            i,
            p.start_offset,
            len_samples
        );
        for (j, q) in placements.iter().enumerate().skip(i + 1) {
            let gap = (p.cfo_hz - q.cfo_hz).abs();
            if p.profile.class_id == q.profile.class_id
                && gap < (p.profile.bandwidth_hz + q.profile.bandwidth_hz) / 2.0
            {
                return Err(Error::AnnotationAmbiguity(alloc::format!(
                    "emitters {} and {} share class {} and overlap in frequency",
                    i,
                    j,
                    p.profile.class_id
                )));
            }
        }
    }
    let frames = len_samples / N_FFT;
    let mut acc = vec![Complex64::new(0.0, 0.0); len_samples];
    let mut boxes = Vec::new();
    for (i, p) in placements.iter().enumerate() {
        let mut rng = seed.derive2(i as u64, SYNTH_STREAM).rng();
        let (samples, bursts) =
            render_bursts(&p.profile, len_samples, p.start_offset, sample_rate_hz, &mut rng);
        let shifted = apply_cfo(
            &IqBuffer::new(samples, sample_rate_hz)?,
            p.cfo_hz,
            p.profile.bandwidth_hz,
        )?;
        for (a, s) in acc.iter_mut().zip(shifted.samples()) {
            *a += s;
        }
        boxes.extend(bursts.into_iter().map(|b| burst_box(&p.profile, p.cfo_hz, b, sample_rate_hz, frames)));
    }
    let mut iq = IqBuffer::new(acc, sample_rate_hz)?;
    if let Some(snr) = snr_db {
        if iq.mean_power() > 0.0 {
            iq = add_awgn(&iq, snr, seed.derive(NOISE_STREAM))?;
        }
    }
    Ok(SceneRecord {
        iq,
        boxes,
        seed: seed.0,
        provenance: SceneProvenance {
            placements: placements.to_vec(),
            snr_db,
            sample_rate_hz,
            len_samples,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::DEFAULT_SAMPLE_RATE_HZ as FS;
    use approx::assert_abs_diff_eq;

    fn flat(bw: f64) -> EmitterProfile {
        EmitterProfile {
            class_id: 0,
            bandwidth_hz: bw,
            burst_duration_s: 2e-3,
            burst_period_s: 5e-3,
            spectral_shape: SpectralShape::FlatNoise,
            power_scale: 1.0,
        }
    }

    fn in_band_fraction(samples: &[Complex64], half_bw: f64) -> f64 {
        let n = samples.len().next_power_of_two() / 2;
        let fft = Fft::new(n).unwrap();
        let mut buf = samples[..n].to_vec();
        fft.forward(&mut buf);
        let total: f64 = buf.iter().map(|v| v.norm_sqr()).sum();
        let inside: f64 = buf
            .iter()
            .enumerate()
            .filter(|(k, _)| signed_freq(*k, n, FS).abs() <= half_bw)
            .map(|(_, v)| v.norm_sqr())
            .sum();
        inside / total
    }

    #[test]
    fn flat_noise_energy_stays_in_band() {
        let p = flat(1.0e6);
        let (iq, bursts) = synth_emitter(&p, 5e-3, FS, Seed(1)).unwrap();
        let b = bursts[0];
        let frac = in_band_fraction(&iq.samples()[b.start..b.end], 0.5e6);
        assert!(frac >= 0.95, "in-band energy fraction {}", frac);
    }

    #[test]
    fn other_shapes_are_mostly_in_band() {
        for shape in [SpectralShape::OfdmLike, SpectralShape::Chirp] {
            let p = EmitterProfile { spectral_shape: shape, bandwidth_hz: 2.0e6, ..flat(1.0) };
            let (iq, bursts) = synth_emitter(&p, 5e-3, FS, Seed(2)).unwrap();
            let b = bursts[0];
            let frac = in_band_fraction(&iq.samples()[b.start..b.end], 1.0e6);
            assert!(frac >= 0.85, "{:?}: {}", shape, frac);
            let power = crate::signal::mean_power(&iq.samples()[b.start..b.end]);
            assert_abs_diff_eq!(power, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn one_period_gives_one_burst_and_is_deterministic() {
        let p = flat(1.0e6);
        let (a, bursts) = synth_emitter(&p, 5e-3, FS, Seed(9)).unwrap();
        assert_eq!(bursts.len(), 1);
        let (b, _) = synth_emitter(&p, 5e-3, FS, Seed(9)).unwrap();
        assert_eq!(a, b);
        assert!(synth_emitter(&p, 4e-3, FS, Seed(9)).is_err());
        assert!(synth_emitter(&flat(6e6), 5e-3, FS, Seed(9)).is_err());
    }

    #[test]
    fn cfo_moves_tone_and_keeps_power() {
        let n = 4096;
        let tone: Vec<Complex64> = (0..n)
            .map(|i| {
                let th = 2.0 * PI * 50.0 * i as f64 / N_FFT as f64;
                Complex64::new(libm::cos(th), libm::sin(th))
            })
            .collect();
        let iq = IqBuffer::new(tone, FS).unwrap();
        assert_eq!(apply_cfo(&iq, 0.0, 0.0).unwrap(), iq);
        let delta = 123_456.0;
        let shifted = apply_cfo(&iq, delta, 0.0).unwrap();
        assert_abs_diff_eq!(shifted.mean_power(), iq.mean_power(), epsilon = 1e-12);
        let peak = |b: &IqBuffer| {
            let g = crate::signal::stft(b, N_FFT).unwrap();
            (0..N_FFT).max_by(|&a, &c| g.get(a, 0).norm().total_cmp(&g.get(c, 0).norm())).unwrap()
        };
        let moved = peak(&shifted) as i64 - peak(&iq) as i64;
        assert_eq!(moved, libm::round(delta * N_FFT as f64 / FS) as i64);
        assert!(apply_cfo(&iq, 4.9e6, 1.0e6).is_err());
    }

    #[test]
    fn awgn_hits_target_snr() {
        let n = 200_000;
        let x: Vec<Complex64> = (0..n).map(|i| Complex64::new(libm::cos(i as f64 * 0.01), 0.5)).collect();
        let iq = IqBuffer::new(x, FS).unwrap();
        let noisy = add_awgn(&iq, 0.0, Seed(4)).unwrap();
        let noise: Vec<Complex64> = noisy.samples().iter().zip(iq.samples()).map(|(a, b)| a - b).collect();
        let pn = crate::signal::mean_power(&noise);
        assert!((pn / iq.mean_power() - 1.0).abs() < 0.05);
        let at20 = add_awgn(&iq, 20.0, Seed(5)).unwrap();
        let noise: Vec<Complex64> = at20.samples().iter().zip(iq.samples()).map(|(a, b)| a - b).collect();
        let snr = 10.0 * libm::log10(iq.mean_power() / crate::signal::mean_power(&noise));
        assert!((snr - 20.0).abs() < 0.2, "{}", snr);
        assert_eq!(add_awgn(&iq, f64::INFINITY, Seed(4)).unwrap(), iq);
        assert_eq!(add_awgn(&iq, 3.0, Seed(8)).unwrap(), add_awgn(&iq, 3.0, Seed(8)).unwrap());
        assert!(add_awgn(&IqBuffer::zeros(8, FS).unwrap(), 3.0, Seed(8)).is_err());
    }

    #[test]
    fn single_emitter_boxes_follow_extents() {
        let p = flat(1.0e6);
        let placement = EmitterPlacement { profile: p, cfo_hz: 0.0, start_offset: 0 };
        let scene = mix_scene(&[placement], 1 << 16, FS, None, Seed(3)).unwrap();
        let (_, bursts) = synth_emitter(&p, (1 << 16) as f64 / FS, FS, Seed(0)).unwrap();
        assert_eq!(scene.boxes.len(), bursts.len());
        for (b, e) in scene.boxes.iter().zip(&bursts) {
            assert_eq!(b.t_lo, libm::round(e.start as f64 / 1024.0) as usize);
            assert_eq!(b.t_hi + 1, libm::round(e.end as f64 / 1024.0) as usize);
            assert_eq!((b.f_lo, b.f_hi), (512 - 50, 512 + 50));
        }
    }

    #[test]
    fn disjoint_emitters_sum_burst_counts_and_ambiguity_is_flagged() {
        let a = EmitterPlacement { profile: flat(1.0e6), cfo_hz: -2.0e6, start_offset: 100 };
        let b = EmitterPlacement {
            profile: EmitterProfile { class_id: 1, burst_period_s: 7e-3, ..flat(0.5e6) },
            cfo_hz: 2.0e6,
            start_offset: 5000,
        };
        let scene = mix_scene(&[a, b], 1 << 17, FS, Some(20.0), Seed(5)).unwrap();
        let per = |p: &EmitterPlacement| {
            let burst = libm::round(p.profile.burst_duration_s * FS) as usize;
            let period = libm::round(p.profile.burst_period_s * FS) as usize;
            (p.start_offset..).step_by(period).take_while(|s| s + burst <= 1 << 17).count()
        };
        assert_eq!(scene.boxes.len(), per(&a) + per(&b));
        assert!(scene.boxes.iter().all(|g| g.is_valid(1024, 128, 2)));
        let clash = EmitterPlacement { cfo_hz: -1.8e6, ..a };
        assert!(matches!(
            mix_scene(&[a, clash], 1 << 17, FS, None, Seed(5)),
            Err(Error::AnnotationAmbiguity(_))
        ));
    }
}
