//! Orthonormal 2D Haar analysis and the wavelet feature branch.

use crate::error::{invalid, Result};
use crate::nn::{upsample_bilinear2, Conv2d};
use crate::params::{self, ParamSource};
use crate::tensor::{crop, reflect_pad, Tensor};

/// The four Haar subbands of a `C × H × W` map, each `C × ⌈H/2⌉ × ⌈W/2⌉`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletSubbands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
    /// Spatial size of the analysed map before padding.
    pub height: usize,
    pub width: usize,
}

impl WaveletSubbands {
    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum()
    }
}

/// Single-level Haar analysis. Odd dimensions are reflect-padded on the
/// bottom/right first. For each 2×2 block `[[a, b], [c, d]]`:
/// `LL = (a+b+c+d)/2`, `LH = (a-b+c-d)/2`, `HL = (a+b-c-d)/2`, `HH = (a-b-c+d)/2`.
pub fn dwt2_haar(x: &Tensor) -> Result<WaveletSubbands> {
    let (c, h, w) = x.dims3()?;
    if c == 0 || h == 0 || w == 0 {
        return invalid(format!("cannot transform an empty {c}×{h}×{w} tensor"));
    }
    let padded;
    let src = if h % 2 == 1 || w % 2 == 1 {
        padded = reflect_pad(x, h + h % 2, w + w % 2)?;
        &padded
    } else {
        x
    };
    let (sh, sw) = (h.div_ceil(2), w.div_ceil(2));
    let mut bands: [Tensor; 4] = std::array::from_fn(|_| Tensor::zeros(&[c, sh, sw]));
    for ci in 0..c {
        for y in 0..sh {
            for xx in 0..sw {
                let a = src.at3(ci, 2 * y, 2 * xx);
                let b = src.at3(ci, 2 * y, 2 * xx + 1);
                let cc = src.at3(ci, 2 * y + 1, 2 * xx);
                let d = src.at3(ci, 2 * y + 1, 2 * xx + 1);
                bands[0].set3(ci, y, xx, (a + b + cc + d) / 2.0);
                bands[1].set3(ci, y, xx, (a - b + cc - d) / 2.0);
                bands[2].set3(ci, y, xx, (a + b - cc - d) / 2.0);
                bands[3].set3(ci, y, xx, (a - b - cc + d) / 2.0);
            }
        }
    }
    let [ll, lh, hl, hh] = bands;
    Ok(WaveletSubbands {
        ll,
        lh,
        hl,
        hh,
        height: h,
        width: w,
    })
}

/// Inverse of [`dwt2_haar`], trimming any padding added for odd sizes.
pub fn idwt2_haar(s: &WaveletSubbands) -> Result<Tensor> {
    let (c, sh, sw) = s.ll.dims3()?;
    for band in [&s.lh, &s.hl, &s.hh] {
        if band.shape() != s.ll.shape() {
            return invalid(format!(
                "subband shape {:?} differs from LL {:?}",
                band.shape(),
                s.ll.shape()
            ));
        }
    }
    if s.height.div_ceil(2) != sh || s.width.div_ceil(2) != sw {
        return invalid(format!(
            "{sh}×{sw} subbands cannot reconstruct a {}×{} map",
            s.height, s.width
        ));
    }
    let mut full = Tensor::zeros(&[c, 2 * sh, 2 * sw]);
    for ci in 0..c {
        for y in 0..sh {
            for xx in 0..sw {
                let ll = s.ll.at3(ci, y, xx);
                let lh = s.lh.at3(ci, y, xx);
                let hl = s.hl.at3(ci, y, xx);
                let hh = s.hh.at3(ci, y, xx);
                full.set3(ci, 2 * y, 2 * xx, (ll + lh + hl + hh) / 2.0);
                full.set3(ci, 2 * y, 2 * xx + 1, (ll - lh + hl - hh) / 2.0);
                full.set3(ci, 2 * y + 1, 2 * xx, (ll + lh - hl - hh) / 2.0);
                full.set3(ci, 2 * y + 1, 2 * xx + 1, (ll - lh - hl + hh) / 2.0);
            }
        }
    }
    if (2 * sh, 2 * sw) == (s.height, s.width) {
        Ok(full)
    } else {
        crop(&full, s.height, s.width)
    }
}

/// Detail path: `1×1 (3C→C) → depthwise 3×3 → 1×1 → pointwise`.
#[derive(Debug, Clone, PartialEq)]
pub struct HighFreqWeights {
    pub reduce: Conv2d,
    pub depthwise: Conv2d,
    pub mix: Conv2d,
    pub pointwise: Conv2d,
}

impl HighFreqWeights {
    pub fn dirac(ch: usize) -> Self {
        Self {
            reduce: Conv2d::dirac(3 * ch, ch, 1),
            depthwise: Conv2d::dirac_depthwise(ch, 3),
            mix: Conv2d::dirac(ch, ch, 1),
            pointwise: Conv2d::dirac(ch, ch, 1),
        }
    }

    pub fn zeros(ch: usize) -> Self {
        Self {
            reduce: Conv2d::zeros(3 * ch, ch, 1),
            depthwise: Conv2d::zeros_depthwise(ch, 3),
            mix: Conv2d::zeros(ch, ch, 1),
            pointwise: Conv2d::zeros(ch, ch, 1),
        }
    }
}

pub fn high_freq_features(s: &WaveletSubbands, w: &HighFreqWeights) -> Result<Tensor> {
    let detail = Tensor::concat_channels(&[&s.lh, &s.hl, &s.hh])?;
    let x = w.reduce.forward(&detail)?;
    let x = w.depthwise.forward(&x)?;
    let x = w.mix.forward(&x)?;
    w.pointwise.forward(&x)
}

/// 1×1 channel alignment of the approximation band.
pub fn low_freq_align(ll: &Tensor, align: &Conv2d) -> Result<Tensor> {
    align.forward(ll)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBranchWeights {
    pub high: HighFreqWeights,
    pub low: Conv2d,
}

impl WaveletBranchWeights {
    pub fn build(src: &mut impl ParamSource, name: &str, ch: usize) -> Result<Self> {
        Ok(Self {
            high: HighFreqWeights {
                reduce: params::conv(src, &format!("{name}.high.reduce"), 3 * ch, ch, 1)?,
                depthwise: params::depthwise(src, &format!("{name}.high.depthwise"), ch, 3)?,
                mix: params::conv(src, &format!("{name}.high.mix"), ch, ch, 1)?,
                pointwise: params::conv(src, &format!("{name}.high.pointwise"), ch, ch, 1)?,
            },
            low: params::conv(src, &format!("{name}.low"), ch, ch, 1)?,
        })
    }

    pub fn zeros(ch: usize) -> Self {
        Self {
            high: HighFreqWeights::zeros(ch),
            low: Conv2d::zeros(ch, ch, 1),
        }
    }
}

/// Returns `(F_low, F_high)` resampled to the input's spatial size.
pub fn wavelet_branch(f_in: &Tensor, w: &WaveletBranchWeights) -> Result<(Tensor, Tensor)> {
    let (_, h, wd) = f_in.dims3()?;
    let bands = dwt2_haar(f_in)?;
    let high = high_freq_features(&bands, &w.high)?;
    let low = low_freq_align(&bands.ll, &w.low)?;
    let lift = |t: &Tensor| -> Result<Tensor> { crop(&upsample_bilinear2(t)?, h, wd) };
    Ok((lift(&low)?, lift(&high)?))
}
