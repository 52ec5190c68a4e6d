//! 2-D convolution via im2col and GEMM.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tensor::Real;

/// One convolution layer, optionally followed by a leaky ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: bool,
}

pub(crate) const LEAKY_SLOPE: f64 = 0.1;

impl ConvSpec {
    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    /// Weights followed by biases.
    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_channels
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel {
            return None;
        }
        Some(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

fn im2col<T: Real>(spec: &ConvSpec, input: &[T], h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
    let k = spec.kernel;
    let n = ho * wo;
    let mut col = vec![T::zero(); spec.col_rows() * n];
    for c in 0..spec.in_channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let out = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Real>(spec: &ConvSpec, col: &[T], h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
    let k = spec.kernel;
    let n = ho * wo;
    let mut out = vec![T::zero(); spec.in_channels * h * w];
    for c in 0..spec.in_channels {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &g) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Forward pass; `params` holds weights (`out x in x k x k`) then biases.
pub(crate) fn conv_forward<T: Real>(
    spec: &ConvSpec,
    params: &[T],
    input: &[T],
    h: usize,
    w: usize,
) -> (Vec<T>, usize, usize) {
    let (ho, wo) = spec.output_size(h, w).expect("validated input size");
    let n = ho * wo;
    let kk = spec.col_rows();
    let (weights, bias) = params.split_at(spec.weight_count());
    let mut out = vec![T::zero(); spec.out_channels * n];
    for (oc, chunk) in out.chunks_mut(n).enumerate() {
        chunk.fill(bias[oc]);
    }
    let col = im2col(spec, input, h, w, ho, wo);
    T::gemm(
        spec.out_channels,
        kk,
        n,
        T::one(),
        weights,
        kk as isize,
        1,
        &col,
        n as isize,
        1,
        T::one(),
        &mut out,
        n as isize,
        1,
    );
    if spec.activation {
        let slope = T::from_f64(LEAKY_SLOPE);
        for v in &mut out {
            if *v < T::zero() {
                *v *= slope;
            }
        }
    }
    (out, ho, wo)
}

/// Backward pass. `grad_out` is the gradient with respect to this layer's
/// (post-activation) output and is consumed. Parameter gradients are
/// accumulated into `param_grad` when given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    spec: &ConvSpec,
    params: &[T],
    input: &[T],
    output: &[T],
    mut grad_out: Vec<T>,
    h: usize,
    w: usize,
    param_grad: Option<&mut [T]>,
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let (ho, wo) = spec.output_size(h, w).expect("validated input size");
    let n = ho * wo;
    let kk = spec.col_rows();
    if spec.activation {
        let slope = T::from_f64(LEAKY_SLOPE);
        for (g, &y) in grad_out.iter_mut().zip(output) {
            if y <= T::zero() {
                *g *= slope;
            }
        }
    }
    let col = im2col(spec, input, h, w, ho, wo);
    if let Some(pg) = param_grad {
        let (wg, bg) = pg.split_at_mut(spec.weight_count());
        T::gemm(
            spec.out_channels,
            n,
            kk,
            T::one(),
            &grad_out,
            n as isize,
            1,
            &col,
            1,
            n as isize,
            T::one(),
            wg,
            kk as isize,
            1,
        );
        for (oc, chunk) in grad_out.chunks(n).enumerate() {
            let mut acc = T::zero();
            for &g in chunk {
                acc += g;
            }
            bg[oc] += acc;
        }
    }
    if !need_input_grad {
        return None;
    }
    let weights = &params[..spec.weight_count()];
    let mut dcol = col;
    T::gemm(
        kk,
        spec.out_channels,
        n,
        T::one(),
        weights,
        1,
        kk as isize,
        &grad_out,
        n as isize,
        1,
        T::zero(),
        &mut dcol,
        n as isize,
        1,
    );
    Some(col2im(spec, &dcol, h, w, ho, wo))
}
