//! Raw complex-float32 I/Q files with a JSON sidecar.
//!
//! Samples are stored as little-endian `f32` pairs, I then Q, with no
//! header. `<name>.meta.json` next to `<name>.cf32` carries the sample rate,
//! center frequency, length and a free-form description.

use std::fs;
use std::path::{Path, PathBuf};

use cuap_core::signal::IqBuffer;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqMeta {
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    pub length_samples: usize,
    pub description: String,
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    let stem = data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    data.with_file_name(format!("{stem}.meta.json"))
}

pub fn encode_cf32(samples: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        out.extend_from_slice(&(s.re as f32).to_le_bytes());
        out.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    out
}

pub fn decode_cf32(bytes: &[u8]) -> Option<Vec<Complex64>> {
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                Complex64::new(re as f64, im as f64)
            })
            .collect(),
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Writes samples and sidecar; returns the SHA-256 of the sample file.
pub fn write_iq(path: &Path, iq: &IqBuffer, center_freq_hz: f64, description: &str) -> Result<String> {
    let bytes = encode_cf32(iq.samples());
    write_bytes(path, &bytes)?;
    let meta = IqMeta {
        sample_rate_hz: iq.sample_rate_hz(),
        center_freq_hz,
        length_samples: iq.len(),
        description: description.to_string(),
    };
    write_json(&sidecar_path(path), &meta)?;
    Ok(crate::hashing::sha256_hex(&bytes))
}

pub fn read_cf32(path: &Path) -> Result<Vec<Complex64>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_cf32(&bytes).ok_or_else(|| format_err(path, format!("length {} is not a multiple of 8 bytes", bytes.len())))
}

/// Reads samples and checks them against the sidecar.
pub fn read_iq(path: &Path) -> Result<(IqBuffer, IqMeta)> {
    let meta: IqMeta = read_json(&sidecar_path(path))?;
    let samples = read_cf32(path)?;
    if samples.len() != meta.length_samples {
        return Err(format_err(
            path,
            format!("holds {} samples but the sidecar says {}", samples.len(), meta.length_samples),
        ));
    }
    let iq = IqBuffer::new(samples, meta.sample_rate_hz).map_err(|e| format_err(path, e))?;
    Ok((iq, meta))
}
