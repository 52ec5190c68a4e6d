//! Spectrogram images.
//!
//! Image row `r` is frequency bin `r`, so row 0 holds the lowest frequency;
//! columns are time frames. Normalized values in `[0, 1]` map to 8-bit gray.

use std::path::Path;

use cuap_core::detector::Detection;
use cuap_core::geometry::Rect;
use cuap_core::scene::GroundTruthBox;
use cuap_core::signal::Grid;

use crate::error::{format_err, Result};
use crate::iqfile::write_bytes;

pub const GT_COLOR: [u8; 3] = [0, 255, 0];
pub const DETECTION_COLOR: [u8; 3] = [255, 0, 0];

fn gray(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| format_err(path, e))?;
        w.write_image_data(data).map_err(|e| format_err(path, e))?;
    }
    Ok(out)
}

pub fn spectrogram_png(path: &Path, values: &Grid<f64>) -> Result<()> {
    let data: Vec<u8> = values.data().iter().map(|&v| gray(v)).collect();
    let bytes = encode_png(path, values.cols(), values.rows(), png::ColorType::Grayscale, &data)?;
    write_bytes(path, &bytes)
}

/// Row-major little-endian `f32`, `rows x cols`, row 0 the lowest bin.
pub fn write_raw_grid(path: &Path, values: &Grid<f64>) -> Result<()> {
    let bytes: Vec<u8> = values.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    write_bytes(path, &bytes)
}

struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn from_gray(values: &Grid<f64>) -> Self {
        let rgb = values.data().iter().flat_map(|&v| [gray(v); 3]).collect();
        Self { width: values.cols(), height: values.rows(), rgb }
    }

    fn put(&mut self, x: usize, y: usize, color: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.rgb[i..i + 3].copy_from_slice(&color);
        }
    }

    /// One-pixel outline of the pixels covered by `rect` (x = time,
    /// y = frequency).
    fn outline(&mut self, rect: &Rect, color: [u8; 3]) {
        let clamp_x = |v: f64| (v.max(0.0) as usize).min(self.width.saturating_sub(1));
        let clamp_y = |v: f64| (v.max(0.0) as usize).min(self.height.saturating_sub(1));
        let (x0, x1) = (clamp_x(rect.x0), clamp_x((rect.x1 - 1.0).max(rect.x0)));
        let (y0, y1) = (clamp_y(rect.y0), clamp_y((rect.y1 - 1.0).max(rect.y0)));
        for x in x0..=x1 {
            self.put(x, y0, color);
            self.put(x, y1, color);
        }
        for y in y0..=y1 {
            self.put(x0, y, color);
            self.put(x1, y, color);
        }
    }
}

/// Grayscale spectrogram with ground truth outlined in green and
/// detections in red.
pub fn overlay_png(path: &Path, values: &Grid<f64>, truth: &[GroundTruthBox], detections: &[Detection]) -> Result<()> {
    let mut canvas = Canvas::from_gray(values);
    for b in truth {
        canvas.outline(&b.rect(), GT_COLOR);
    }
    for d in detections {
        canvas.outline(&d.rect, DETECTION_COLOR);
    }
    let bytes = encode_png(path, canvas.width, canvas.height, png::ColorType::Rgb, &canvas.rgb)?;
    write_bytes(path, &bytes)
}
