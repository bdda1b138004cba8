//! Dense row-major tensors of rank at most four.
//!
//! Feature maps are stored channel-major as `C × H × W`; an optional leading
//! batch axis gives rank four. Sequences produced by the scan module use the
//! shape `C × L`.

use crate::error::{invalid, Result};

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.len() <= MAX_RANK, "tensor rank {} > {MAX_RANK}", shape.len());
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return invalid(format!("tensor rank {} exceeds {MAX_RANK}", shape.len()));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return invalid(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a `C × H × W` tensor from a generator called in row-major order.
    pub fn from_fn3(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ci, y, x));
                }
            }
        }
        Self {
            shape: vec![c, h, w],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Returns `(C, H, W)` for a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => invalid(format!("expected a C×H×W tensor, got shape {:?}", self.shape)),
        }
    }

    /// Returns `(C, L)` for a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [c, l] => Ok((c, l)),
            _ => invalid(format!("expected a C×L tensor, got shape {:?}", self.shape)),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.len() > MAX_RANK {
            return invalid(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x] = v;
    }

    /// Immutable view of one channel plane of a rank-3 tensor.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            ));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Concatenates rank-3 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return invalid("concat of zero tensors");
        };
        let (_, h, w) = first.dims3()?;
        let mut c_total = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.dims3()?;
            if (ph, pw) != (h, w) {
                return invalid(format!(
                    "concat spatial mismatch: {h}×{w} vs {ph}×{pw}"
                ));
            }
            c_total += c;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: vec![c_total, h, w],
            data,
        })
    }

    /// Copies channels `[start, start + count)` of a rank-3 tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        let (c, h, w) = self.dims3()?;
        if start + count > c {
            return invalid(format!("channel slice {start}+{count} exceeds {c}"));
        }
        let plane = h * w;
        Ok(Self {
            shape: vec![count, h, w],
            data: self.data[start * plane..(start + count) * plane].to_vec(),
        })
    }
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`-1 → 1`, `n → n - 2`); folds repeatedly for large offsets.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Reflect-pads the spatial axes of a `C × H × W` tensor on the bottom/right.
pub fn reflect_pad(t: &Tensor, new_h: usize, new_w: usize) -> Result<Tensor> {
    let (c, h, w) = t.dims3()?;
    if new_h < h || new_w < w {
        return invalid(format!("cannot pad {h}×{w} down to {new_h}×{new_w}"));
    }
    Ok(Tensor::from_fn3(c, new_h, new_w, |ci, y, x| {
        t.at3(ci, reflect_index(y as isize, h), reflect_index(x as isize, w))
    }))
}

/// Crops the top-left `new_h × new_w` window of a `C × H × W` tensor.
pub fn crop(t: &Tensor, new_h: usize, new_w: usize) -> Result<Tensor> {
    let (c, h, w) = t.dims3()?;
    if new_h > h || new_w > w {
        return invalid(format!("cannot crop {h}×{w} to {new_h}×{new_w}"));
    }
    Ok(Tensor::from_fn3(c, new_h, new_w, |ci, y, x| t.at3(ci, y, x)))
}
