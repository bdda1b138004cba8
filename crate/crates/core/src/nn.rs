//! Forward-only neural-network primitives on `C × H × W` tensors.
//!
//! All loops run in a fixed order so results do not depend on scheduling.

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Stride-1 2D convolution with zero "same" padding and odd square kernels.
///
/// Weights are laid out `[out][in / groups][k][k]`. Depthwise convolutions
/// use one group per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub depthwise: bool,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn weight_len(in_ch: usize, out_ch: usize, kernel: usize, depthwise: bool) -> usize {
        if depthwise {
            out_ch * kernel * kernel
        } else {
            out_ch * in_ch * kernel * kernel
        }
    }

    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        Self::build(in_ch, out_ch, kernel, false, weight, bias)
    }

    pub fn new_depthwise(ch: usize, kernel: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        Self::build(ch, ch, kernel, true, weight, bias)
    }

    fn build(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        depthwise: bool,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel % 2 == 0 || kernel == 0 {
            return invalid(format!("kernel size must be odd, got {kernel}"));
        }
        if weight.len() != Self::weight_len(in_ch, out_ch, kernel, depthwise) || bias.len() != out_ch {
            return invalid(format!(
                "conv {in_ch}->{out_ch} k{kernel}: got {} weights and {} biases",
                weight.len(),
                bias.len()
            ));
        }
        Ok(Self {
            in_ch,
            out_ch,
            kernel,
            depthwise,
            weight,
            bias,
        })
    }

    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        let n = Self::weight_len(in_ch, out_ch, kernel, false);
        Self::new(in_ch, out_ch, kernel, vec![0.0; n], vec![0.0; out_ch]).expect("valid shape")
    }

    pub fn zeros_depthwise(ch: usize, kernel: usize) -> Self {
        Self::new_depthwise(ch, kernel, vec![0.0; ch * kernel * kernel], vec![0.0; ch]).expect("valid shape")
    }

    /// Identity kernel: output channel `o` copies input channel `o` for
    /// `o < min(in, out)`; the remaining outputs are zero.
    pub fn dirac(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        let mut conv = Self::zeros(in_ch, out_ch, kernel);
        let centre = kernel / 2;
        for o in 0..in_ch.min(out_ch) {
            conv.weight[((o * in_ch + o) * kernel + centre) * kernel + centre] = 1.0;
        }
        conv
    }

    pub fn dirac_depthwise(ch: usize, kernel: usize) -> Self {
        let mut conv = Self::zeros_depthwise(ch, kernel);
        let centre = kernel / 2;
        for o in 0..ch {
            conv.weight[(o * kernel + centre) * kernel + centre] = 1.0;
        }
        conv
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (c, h, w) = x.dims3()?;
        if c != self.in_ch {
            return invalid(format!("conv expects {} input channels, got {c}", self.in_ch));
        }
        let k = self.kernel;
        let r = (k / 2) as isize;
        let mut out = Tensor::zeros(&[self.out_ch, h, w]);
        let xs = x.data();
        let plane = h * w;
        let ys = out.data_mut();
        for o in 0..self.out_ch {
            let inputs = if self.depthwise { o..o + 1 } else { 0..c };
            let dst = &mut ys[o * plane..(o + 1) * plane];
            dst.fill(self.bias[o]);
            for (slot, i) in inputs.enumerate() {
                let src = &xs[i * plane..(i + 1) * plane];
                let wbase = if self.depthwise {
                    o * k * k
                } else {
                    (o * c + slot) * k * k
                };
                let kern = &self.weight[wbase..wbase + k * k];
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = 0.0;
                        for ky in 0..k {
                            let sy = y as isize + ky as isize - r;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let row = &src[sy as usize * w..(sy as usize + 1) * w];
                            for kx in 0..k {
                                let sx = xx as isize + kx as isize - r;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                acc += kern[ky * k + kx] * row[sx as usize];
                            }
                        }
                        dst[y * w + xx] += acc;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Normalises across channels independently at every spatial position,
/// followed by a learnable per-channel affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub eps: f64,
}

pub const DEFAULT_LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn identity(ch: usize, eps: f64) -> Self {
        Self {
            gain: vec![1.0; ch],
            bias: vec![0.0; ch],
            eps,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (c, h, w) = x.dims3()?;
        if c != self.gain.len() || c != self.bias.len() {
            return invalid(format!("layer norm over {} channels, got {c}", self.gain.len()));
        }
        let plane = h * w;
        let xs = x.data();
        let mut out = Tensor::zeros(&[c, h, w]);
        let ys = out.data_mut();
        for p in 0..plane {
            let mut mean = 0.0;
            for ci in 0..c {
                mean += xs[ci * plane + p];
            }
            mean /= c as f64;
            let mut var = 0.0;
            for ci in 0..c {
                let d = xs[ci * plane + p] - mean;
                var += d * d;
            }
            var /= c as f64;
            let inv = 1.0 / (var + self.eps).sqrt();
            for ci in 0..c {
                ys[ci * plane + p] = (xs[ci * plane + p] - mean) * inv * self.gain[ci] + self.bias[ci];
            }
        }
        Ok(out)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    // ln(exp(y) - 1), written to stay accurate for small y
    y + (-(-y).exp_m1()).ln()
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if h < 2 || w < 2 {
        return invalid(format!("cannot pool a {h}×{w} map"));
    }
    Ok(Tensor::from_fn3(c, h / 2, w / 2, |ci, y, xx| {
        let (y0, x0) = (2 * y, 2 * xx);
        x.at3(ci, y0, x0)
            .max(x.at3(ci, y0, x0 + 1))
            .max(x.at3(ci, y0 + 1, x0))
            .max(x.at3(ci, y0 + 1, x0 + 1))
    }))
}

pub fn upsample_nearest2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    Ok(Tensor::from_fn3(c, 2 * h, 2 * w, |ci, y, xx| x.at3(ci, y / 2, xx / 2)))
}

/// ×2 bilinear upsampling with half-pixel centres and edge clamping.
pub fn upsample_bilinear2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let taps = |dst: usize, n: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    Ok(Tensor::from_fn3(c, 2 * h, 2 * w, |ci, y, xx| {
        let (y0, y1, fy) = taps(y, h);
        let (x0, x1, fx) = taps(xx, w);
        let top = x.at3(ci, y0, x0) * (1.0 - fx) + x.at3(ci, y0, x1) * fx;
        let bottom = x.at3(ci, y1, x0) * (1.0 - fx) + x.at3(ci, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}
