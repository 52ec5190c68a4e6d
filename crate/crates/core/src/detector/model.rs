use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::conv::{conv_backward, conv_forward, ConvSpec};
use crate::error::{ensure, Error, Result};
use crate::geometry::Rect;
use crate::rng::Seed;
use crate::tensor::{Real, Tensor};

/// Total downsampling from input pixels to grid cells.
pub const GRID_STRIDE: usize = 64;
/// Box channels per cell: center-x, center-y, width, height.
pub const BOX_CHANNELS: usize = 4;
/// Bound on the exponent of the size link.
const SIZE_LOG_CLAMP: f64 = 8.0;
/// Initial class-logit bias, a prior of about 1% per class.
const PRIOR_LOGIT: f64 = -4.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArchId {
    A,
    B,
    C,
}

impl ArchId {
    pub const ALL: [ArchId; 3] = [ArchId::A, ArchId::B, ArchId::C];

    pub fn base_width(self) -> usize {
        match self {
            ArchId::A => 16,
            ArchId::B => 24,
            ArchId::C => 32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchId::A => "A",
            ArchId::B => "B",
            ArchId::C => "C",
        }
    }

    pub fn parse(s: &str) -> Option<ArchId> {
        match s {
            "A" | "a" => Some(ArchId::A),
            "B" | "b" => Some(ArchId::B),
            "C" | "c" => Some(ArchId::C),
            _ => None,
        }
    }

    /// Stride-4 stem, four stride-2 blocks, a 3x3 neck on the cell grid (two
    /// for `C`), and a 1x1 head with `4 + num_classes` outputs.
    pub fn layers(self, num_classes: usize) -> Vec<ConvSpec> {
        let b = self.base_width();
        let conv = |i, o, k, s, p, act| ConvSpec {
            in_channels: i,
            out_channels: o,
            kernel: k,
            stride: s,
            padding: p,
            activation: act,
        };
        let mut layers = vec![
            conv(3, b, 4, 4, 0, true),
            conv(b, b, 3, 2, 1, true),
            conv(b, 2 * b, 3, 2, 1, true),
            conv(2 * b, 2 * b, 3, 2, 1, true),
            conv(2 * b, 4 * b, 3, 2, 1, true),
            conv(4 * b, 4 * b, 3, 1, 1, true),
        ];
        if self == ArchId::C {
            layers.push(conv(4 * b, 4 * b, 3, 1, 1, true));
        }
        layers.push(conv(4 * b, BOX_CHANNELS + num_classes, 1, 1, 0, false));
        layers
    }
}

impl core::fmt::Display for ArchId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// A convolutional detector with a flat `f32` parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    arch: ArchId,
    num_classes: usize,
    layers: Vec<ConvSpec>,
    weights: Vec<f32>,
}

/// Per-cell boxes and class scores before suppression. Cell `i` sits at row
/// `i / grid_w` (frequency) and column `i % grid_w` (time).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid<T = f32> {
    pub grid_h: usize,
    pub grid_w: usize,
    pub num_classes: usize,
    pub cell_h: f64,
    pub cell_w: f64,
    /// `(cx, cy, w, h)` in pixels per cell.
    pub boxes: Vec<[T; 4]>,
    /// `cells x num_classes`, each in `(0, 1)`.
    pub scores: Vec<T>,
}

impl<T: Real> PredictionGrid<T> {
    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    #[inline]
    pub fn score(&self, cell: usize, class: usize) -> T {
        self.scores[cell * self.num_classes + class]
    }

    pub fn rect(&self, cell: usize) -> Rect {
        let [cx, cy, w, h] = self.boxes[cell];
        Rect::from_center(cx.as_f64(), cy.as_f64(), w.as_f64(), h.as_f64())
    }
}

/// Gradient of a loss with respect to a [`PredictionGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrad<T = f32> {
    pub boxes: Vec<[T; 4]>,
    pub scores: Vec<T>,
}

impl<T: Real> PredictionGrad<T> {
    pub fn zeros_like(grid: &PredictionGrid<T>) -> Self {
        Self { boxes: vec![[T::zero(); 4]; grid.cells()], scores: vec![T::zero(); grid.scores.len()] }
    }
}

/// Activations recorded by [`DetectorModel::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    fingerprint: u64,
    /// Input followed by every layer output, with spatial sizes.
    activations: Vec<(Vec<T>, usize, usize)>,
}

impl<T> ForwardCache<T> {
    pub fn head_output(&self) -> &[T] {
        &self.activations.last().expect("non-empty").0
    }
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub weights: Option<Vec<T>>,
    pub input: Option<Tensor<T>>,
}

impl DetectorModel {
    /// He-initialized model; the head starts with small weights and a
    /// low class prior.
    pub fn new(arch: ArchId, num_classes: usize, seed: Seed) -> Result<Self> {
        ensure!(num_classes >= 1, "a detector needs at least one class");
        let layers = arch.layers(num_classes);
        let mut rng = seed.rng();
        let mut weights = Vec::with_capacity(layers.iter().map(ConvSpec::param_count).sum());
        let last = layers.len() - 1;
        for (li, spec) in layers.iter().enumerate() {
            let fan_in = (spec.in_channels * spec.kernel * spec.kernel) as f64;
            let std = if li == last { 0.01 } else { libm::sqrt(2.0 / fan_in) };
            for _ in 0..spec.weight_count() {
                let z: f64 = rng.sample(StandardNormal);
                weights.push((z * std) as f32);
            }
            for oc in 0..spec.out_channels {
                let bias = if li == last && oc >= BOX_CHANNELS { PRIOR_LOGIT } else { 0.0 };
                weights.push(bias as f32);
            }
        }
        Ok(Self { arch, num_classes, layers, weights })
    }

    /// All parameters zero: every score is exactly one half.
    pub fn zeros(arch: ArchId, num_classes: usize) -> Self {
        let layers = arch.layers(num_classes);
        let n = layers.iter().map(ConvSpec::param_count).sum();
        Self { arch, num_classes, layers, weights: vec![0.0; n] }
    }

    pub fn from_weights(arch: ArchId, num_classes: usize, weights: Vec<f32>) -> Result<Self> {
        let layers = arch.layers(num_classes);
        let n: usize = layers.iter().map(ConvSpec::param_count).sum();
        ensure!(
            weights.len() == n,
            "architecture {} with {} classes has {} parameters, got {}",
            arch,
            num_classes,
            n,
            weights.len()
        );
        ensure!(weights.iter().all(|w| w.is_finite()), "weights must be finite");
        Ok(Self { arch, num_classes, layers, weights })
    }

    pub fn arch(&self) -> ArchId {
        self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    /// FNV-1a over the architecture and parameter bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for b in self.arch.name().bytes() {
            eat(b);
        }
        for b in (self.num_classes as u64).to_le_bytes() {
            eat(b);
        }
        for w in &self.weights {
            for b in w.to_bits().to_le_bytes() {
                eat(b);
            }
        }
        h
    }

    fn params_as<T: Real>(&self) -> Vec<T> {
        self.weights.iter().map(|&w| T::from_f64(w as f64)).collect()
    }

    fn check_input<T: Real>(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let shape = x.shape();
        ensure!(
            shape.len() == 3 && shape[0] == 3,
            "detector input must be 3 x H x W, got {:?}",
            shape
        );
        let (h, w) = (shape[1], shape[2]);
        ensure!(
            h >= GRID_STRIDE && w >= GRID_STRIDE && h % GRID_STRIDE == 0 && w % GRID_STRIDE == 0,
            "input {}x{} is not a positive multiple of the {}-pixel cell",
            h,
            w,
            GRID_STRIDE
        );
        Ok((h, w))
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<PredictionGrid<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached<T: Real>(&self, x: &Tensor<T>) -> Result<(PredictionGrid<T>, ForwardCache<T>)> {
        let (h, w) = self.check_input(x)?;
        let params = self.params_as::<T>();
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push((x.data().to_vec(), h, w));
        let mut offset = 0;
        for spec in &self.layers {
            let p = &params[offset..offset + spec.param_count()];
            offset += spec.param_count();
            let (input, ih, iw) = activations.last().expect("non-empty");
            let (out, oh, ow) = conv_forward(spec, p, input, *ih, *iw);
            activations.push((out, oh, ow));
        }
        let grid = self.decode(&activations.last().expect("non-empty").0, h, w);
        Ok((grid, ForwardCache { fingerprint: self.fingerprint(), activations }))
    }

    fn grid_dims(h: usize, w: usize) -> (usize, usize) {
        (h / GRID_STRIDE, w / GRID_STRIDE)
    }

    fn decode<T: Real>(&self, raw: &[T], h: usize, w: usize) -> PredictionGrid<T> {
        let (gh, gw) = Self::grid_dims(h, w);
        let cells = gh * gw;
        let (sh, sw) = ((h / gh) as f64, (w / gw) as f64);
        let c = self.num_classes;
        let mut boxes = Vec::with_capacity(cells);
        let mut scores = Vec::with_capacity(cells * c);
        let clamp = T::from_f64(SIZE_LOG_CLAMP);
        for i in 0..cells {
            let (gy, gx) = (i / gw, i % gw);
            let ch = |k: usize| raw[k * cells + i];
            let cx = (T::from_f64(gx as f64 + 0.5) + ch(0)) * T::from_f64(sw);
            let cy = (T::from_f64(gy as f64 + 0.5) + ch(1)) * T::from_f64(sh);
            let bw = T::from_f64(sw) * ch(2).max(-clamp).min(clamp).exp();
            let bh = T::from_f64(sh) * ch(3).max(-clamp).min(clamp).exp();
            boxes.push([cx, cy, bw, bh]);
            for k in 0..c {
                scores.push(sigmoid(ch(BOX_CHANNELS + k)));
            }
        }
        PredictionGrid { grid_h: gh, grid_w: gw, num_classes: c, cell_h: sh, cell_w: sw, boxes, scores }
    }

    fn check_cache<T: Real>(&self, cache: &ForwardCache<T>) -> Result<()> {
        if cache.fingerprint != self.fingerprint() || cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::InvalidState(format!(
                "forward state does not belong to this {} model",
                self.arch
            )));
        }
        Ok(())
    }

    /// Reverse-mode pass from gradients on the decoded predictions.
    pub fn backward<T: Real>(
        &self,
        cache: &ForwardCache<T>,
        grad: &PredictionGrad<T>,
        want_weights: bool,
        want_input: bool,
    ) -> Result<Gradients<T>> {
        self.check_cache(cache)?;
        let raw = cache.head_output();
        let (_, h, w) = cache.activations[0];
        let (gh, gw) = Self::grid_dims(h, w);
        let cells = gh * gw;
        let (sh, sw) = ((h / gh) as f64, (w / gw) as f64);
        let c = self.num_classes;
        ensure!(
            grad.boxes.len() == cells && grad.scores.len() == cells * c,
            "prediction gradient does not match the {}x{} grid",
            gh,
            gw
        );
        let clamp = T::from_f64(SIZE_LOG_CLAMP);
        let mut d_raw = vec![T::zero(); raw.len()];
        for i in 0..cells {
            let [dcx, dcy, dw, dh] = grad.boxes[i];
            d_raw[i] = dcx * T::from_f64(sw);
            d_raw[cells + i] = dcy * T::from_f64(sh);
            let tw = raw[2 * cells + i];
            if tw.abs() < clamp {
                d_raw[2 * cells + i] = dw * T::from_f64(sw) * tw.exp();
            }
            let th = raw[3 * cells + i];
            if th.abs() < clamp {
                d_raw[3 * cells + i] = dh * T::from_f64(sh) * th.exp();
            }
            for k in 0..c {
                let s = sigmoid(raw[(BOX_CHANNELS + k) * cells + i]);
                d_raw[(BOX_CHANNELS + k) * cells + i] = grad.scores[i * c + k] * s * (T::one() - s);
            }
        }
        self.backward_raw(cache, d_raw, want_weights, want_input)
    }

    /// Reverse-mode pass from gradients on the raw head channels
    /// (`(4 + C) x G_h x G_w`).
    pub fn backward_raw<T: Real>(
        &self,
        cache: &ForwardCache<T>,
        d_raw: Vec<T>,
        want_weights: bool,
        want_input: bool,
    ) -> Result<Gradients<T>> {
        self.check_cache(cache)?;
        ensure!(
            d_raw.len() == cache.head_output().len(),
            "raw gradient has {} values, head output has {}",
            d_raw.len(),
            cache.head_output().len()
        );
        let params = self.params_as::<T>();
        let mut weight_grad = want_weights.then(|| vec![T::zero(); params.len()]);
        let mut grad = d_raw;
        let mut offset = params.len();
        for (li, spec) in self.layers.iter().enumerate().rev() {
            offset -= spec.param_count();
            let p = &params[offset..offset + spec.param_count()];
            let (input, ih, iw) = &cache.activations[li];
            let (output, _, _) = &cache.activations[li + 1];
            let pg = weight_grad.as_mut().map(|g| &mut g[offset..offset + spec.param_count()]);
            let need_input = li > 0 || want_input;
            match conv_backward(spec, p, input, output, grad, *ih, *iw, pg, need_input) {
                Some(g) => grad = g,
                None => {
                    grad = Vec::new();
                    break;
                }
            }
        }
        let input = if want_input {
            let (_, h, w) = cache.activations[0];
            Some(Tensor::from_vec(&[3, h, w], grad)?)
        } else {
            None
        };
        Ok(Gradients { weights: weight_grad, input })
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_input<T: Real>(h: usize, w: usize, seed: u64) -> Tensor<T> {
        let mut rng = crate::rng::StreamRng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| T::from_f64(rng.random_range(0.0..1.0))).collect();
        Tensor::from_vec(&[3, h, w], data).unwrap()
    }

    fn random_grad<T: Real>(grid: &PredictionGrid<T>, seed: u64) -> PredictionGrad<T> {
        let mut rng = crate::rng::StreamRng::seed_from_u64(seed);
        let mut r = || T::from_f64(rng.random_range(-1.0..1.0));
        PredictionGrad {
            boxes: (0..grid.cells()).map(|_| [r(), r(), r(), r()]).collect(),
            scores: (0..grid.scores.len()).map(|_| r()).collect(),
        }
    }

    fn objective(grid: &PredictionGrid<f64>, g: &PredictionGrad<f64>) -> f64 {
        let mut acc = 0.0;
        for (b, gb) in grid.boxes.iter().zip(&g.boxes) {
            for k in 0..4 {
                acc += b[k] * gb[k];
            }
        }
        for (s, gs) in grid.scores.iter().zip(&g.scores) {
            acc += s * gs;
        }
        acc
    }

    #[test]
    fn zero_weights_score_one_half() {
        let m = DetectorModel::zeros(ArchId::A, 4);
        let g = m.forward(&random_input::<f32>(128, 128, 1)).unwrap();
        assert_eq!(g.grid_h, 2);
        assert!(g.scores.iter().all(|&s| s == 0.5));
        assert!(g.boxes.iter().all(|b| b[2] == 64.0 && b[3] == 64.0));
    }

    #[test]
    fn full_size_grid_is_sixteen_square() {
        let m = DetectorModel::new(ArchId::A, 4, Seed(3)).unwrap();
        let g = m.forward(&random_input::<f32>(1024, 1024, 2)).unwrap();
        assert_eq!((g.grid_h, g.grid_w), (16, 16));
        assert!(g.scores.iter().all(|&s| s > 0.0 && s < 1.0));
        assert!(g.boxes.iter().all(|b| b[2] > 0.0 && b[3] > 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let m = DetectorModel::new(ArchId::B, 4, Seed(5)).unwrap();
        let x = random_input::<f32>(128, 192, 4);
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn rejects_bad_shapes() {
        let m = DetectorModel::zeros(ArchId::A, 4);
        assert!(m.forward(&Tensor::<f32>::zeros(&[3, 100, 128])).is_err());
        assert!(m.forward(&Tensor::<f32>::zeros(&[1, 128, 128])).is_err());
        assert!(DetectorModel::from_weights(ArchId::A, 4, vec![0.0; 3]).is_err());
    }

    #[test]
    fn stale_cache_is_invalid_state() {
        let m = DetectorModel::new(ArchId::A, 4, Seed(1)).unwrap();
        let other = DetectorModel::new(ArchId::A, 4, Seed(2)).unwrap();
        let x = random_input::<f32>(64, 64, 1);
        let (grid, cache) = other.forward_cached(&x).unwrap();
        let g = PredictionGrad::zeros_like(&grid);
        assert!(matches!(m.backward(&cache, &g, true, true), Err(Error::InvalidState(_))));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let m = DetectorModel::new(ArchId::C, 4, Seed(1)).unwrap();
        let x = random_input::<f32>(64, 128, 1);
        let (grid, cache) = m.forward_cached(&x).unwrap();
        let out = m.backward(&cache, &PredictionGrad::zeros_like(&grid), true, true).unwrap();
        assert!(out.weights.unwrap().iter().all(|&v| v == 0.0));
        assert!(out.input.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_output_grad() {
        let m = DetectorModel::new(ArchId::A, 4, Seed(9)).unwrap();
        let x = random_input::<f64>(64, 128, 3);
        let (grid, cache) = m.forward_cached(&x).unwrap();
        let g1 = random_grad(&grid, 1);
        let g2 = random_grad(&grid, 2);
        let sum = PredictionGrad {
            boxes: g1.boxes.iter().zip(&g2.boxes).map(|(a, b)| core::array::from_fn(|k| a[k] + b[k])).collect(),
            scores: g1.scores.iter().zip(&g2.scores).map(|(a, b)| a + b).collect(),
        };
        let r1 = m.backward(&cache, &g1, true, true).unwrap();
        let r2 = m.backward(&cache, &g2, true, true).unwrap();
        let rs = m.backward(&cache, &sum, true, true).unwrap();
        let check = |a: &[f64], b: &[f64], s: &[f64]| {
            for ((a, b), s) in a.iter().zip(b).zip(s) {
                assert!((a + b - s).abs() <= 1e-6 * (1.0 + s.abs()));
            }
        };
        check(r1.weights.as_ref().unwrap(), r2.weights.as_ref().unwrap(), rs.weights.as_ref().unwrap());
        check(r1.input.as_ref().unwrap().data(), r2.input.as_ref().unwrap().data(), rs.input.as_ref().unwrap().data());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for arch in ArchId::ALL {
            let m = DetectorModel::new(arch, 4, Seed(21)).unwrap();
            let x = random_input::<f64>(64, 128, 8);
            let (grid, cache) = m.forward_cached(&x).unwrap();
            let g = random_grad(&grid, 5);
            let analytic = m.backward(&cache, &g, false, true).unwrap().input.unwrap();
            let mut rng = crate::rng::StreamRng::seed_from_u64(77);
            for _ in 0..20 {
                let idx = rng.random_range(0..x.len());
                let h = 1e-5;
                let mut xp = x.clone();
                xp.data_mut()[idx] += h;
                let mut xm = x.clone();
                xm.data_mut()[idx] -= h;
                let fd = (objective(&m.forward(&xp).unwrap(), &g) - objective(&m.forward(&xm).unwrap(), &g)) / (2.0 * h);
                let a = analytic.data()[idx];
                assert!(
                    (a - fd).abs() <= 1e-6 + 1e-4 * fd.abs().max(a.abs()),
                    "arch {arch} idx {idx}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let m = DetectorModel::new(ArchId::A, 3, Seed(4)).unwrap();
        let x = random_input::<f64>(64, 64, 2);
        let (grid, cache) = m.forward_cached(&x).unwrap();
        let g = random_grad(&grid, 6);
        let analytic = m.backward(&cache, &g, true, false).unwrap().weights.unwrap();
        let mut rng = crate::rng::StreamRng::seed_from_u64(78);
        let eval = |w: Vec<f32>| {
            let mm = DetectorModel::from_weights(ArchId::A, 3, w).unwrap();
            objective(&mm.forward(&x).unwrap(), &g)
        };
        for _ in 0..20 {
            let idx = rng.random_range(0..m.weights().len());
            // Step must be representable in f32 weights.
            let h = 1e-3f32;
            let mut wp = m.weights().to_vec();
            wp[idx] += h;
            let mut wm = m.weights().to_vec();
            wm[idx] -= h;
            let hh = (wp[idx] as f64 - wm[idx] as f64) / 2.0;
            let fd = (eval(wp) - eval(wm)) / (2.0 * hh);
            let a = analytic[idx];
            assert!((a - fd).abs() <= 1e-4 + 1e-2 * fd.abs(), "idx {idx}: {a} vs {fd}");
        }
    }
}
