//! Flat parameter storage and the sources that fill weight structs.
//!
//! Every weight struct is built through a [`ParamSource`], which hands out
//! named tensors in a fixed order. The same construction code therefore
//! defines the parameter layout, draws the random initialisation, and reads
//! weights back from a flat vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::nn::{softplus_inv, Conv2d, LayerNorm};
use crate::ssm::SsmWeights;

/// Step sizes drawn log-uniformly from this range at init.
pub const DT_INIT_RANGE: (f64, f64) = (0.01, 0.1);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
    /// `ln(1), ln(2), …, ln(period)` repeated; gives `A = -(1..=N)`.
    LogRamp { period: usize },
    /// `softplus⁻¹(dt)` with `dt` log-uniform in [`DT_INIT_RANGE`].
    StepBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub trait ParamSource {
    fn take(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Vec<f64>>;
}

/// Records the layout and hands out zeros.
#[derive(Debug, Default)]
pub struct LayoutRecorder {
    pub entries: Vec<ParamEntry>,
    total: usize,
}

impl LayoutRecorder {
    pub fn total(&self) -> usize {
        self.total
    }

    fn record(&mut self, name: &str, shape: &[usize], init: Init) -> usize {
        let n: usize = shape.iter().product();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            offset: self.total,
            shape: shape.to_vec(),
            init,
        });
        self.total += n;
        n
    }
}

impl ParamSource for LayoutRecorder {
    fn take(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Vec<f64>> {
        let n = self.record(name, shape, init);
        Ok(vec![0.0; n])
    }
}

/// Draws the seeded initialisation while recording the layout.
#[derive(Debug)]
pub struct Initializer {
    rng: ChaCha8Rng,
    layout: LayoutRecorder,
    values: Vec<f64>,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            layout: LayoutRecorder::default(),
            values: Vec::new(),
        }
    }

    pub fn finish(self) -> (Vec<ParamEntry>, Vec<f64>) {
        (self.layout.entries, self.values)
    }
}

impl ParamSource for Initializer {
    fn take(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Vec<f64>> {
        let n = self.layout.record(name, shape, init);
        let vals: Vec<f64> = match init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::LogRamp { period } => (0..n).map(|i| ((i % period + 1) as f64).ln()).collect(),
            Init::StepBias => {
                let (lo, hi) = (DT_INIT_RANGE.0.ln(), DT_INIT_RANGE.1.ln());
                (0..n)
                    .map(|_| softplus_inv(self.rng.random_range(lo..hi).exp()))
                    .collect()
            }
        };
        self.values.extend_from_slice(&vals);
        Ok(vals)
    }
}

/// Reads consecutive chunks out of a flat vector.
#[derive(Debug)]
pub struct SliceSource<'a> {
    values: &'a [f64],
    cursor: usize,
}

impl<'a> SliceSource<'a> {
    pub fn new(values: &'a [f64]) -> Self {
        Self { values, cursor: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.values.len() - self.cursor
    }
}

impl ParamSource for SliceSource<'_> {
    fn take(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Vec<f64>> {
        let n: usize = shape.iter().product();
        if self.cursor + n > self.values.len() {
            return invalid(format!(
                "parameter vector too short for '{name}' ({} of {} used)",
                self.cursor,
                self.values.len()
            ));
        }
        let out = self.values[self.cursor..self.cursor + n].to_vec();
        self.cursor += n;
        Ok(out)
    }
}

/// Every parameter zero, including normalisation gains.
#[derive(Debug, Default)]
pub struct ZeroSource;

impl ParamSource for ZeroSource {
    fn take(&mut self, _name: &str, shape: &[usize], _init: Init) -> Result<Vec<f64>> {
        Ok(vec![0.0; shape.iter().product()])
    }
}

/// Every parameter drawn from `U(-scale, scale)`, layout-agnostic. Handy for
/// exercising blocks away from their neutral initialisation.
#[derive(Debug)]
pub struct UniformSource {
    rng: ChaCha8Rng,
    scale: f64,
}

impl UniformSource {
    pub fn new(seed: u64, scale: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            scale,
        }
    }
}

impl ParamSource for UniformSource {
    fn take(&mut self, _name: &str, shape: &[usize], _init: Init) -> Result<Vec<f64>> {
        let n = shape.iter().product();
        Ok((0..n)
            .map(|_| self.rng.random_range(-self.scale..self.scale))
            .collect())
    }
}

pub fn conv(src: &mut impl ParamSource, name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Result<Conv2d> {
    let w = src.take(
        &format!("{name}.weight"),
        &[out_ch, in_ch, kernel, kernel],
        Init::Uniform {
            fan_in: in_ch * kernel * kernel,
        },
    )?;
    let b = src.take(&format!("{name}.bias"), &[out_ch], Init::Zeros)?;
    Conv2d::new(in_ch, out_ch, kernel, w, b)
}

pub fn depthwise(src: &mut impl ParamSource, name: &str, ch: usize, kernel: usize) -> Result<Conv2d> {
    let w = src.take(
        &format!("{name}.weight"),
        &[ch, 1, kernel, kernel],
        Init::Uniform {
            fan_in: kernel * kernel,
        },
    )?;
    let b = src.take(&format!("{name}.bias"), &[ch], Init::Zeros)?;
    Conv2d::new_depthwise(ch, kernel, w, b)
}

pub fn layer_norm(src: &mut impl ParamSource, name: &str, ch: usize, eps: f64) -> Result<LayerNorm> {
    Ok(LayerNorm {
        gain: src.take(&format!("{name}.gain"), &[ch], Init::Ones)?,
        bias: src.take(&format!("{name}.bias"), &[ch], Init::Zeros)?,
        eps,
    })
}

pub fn ssm(src: &mut impl ParamSource, name: &str, ch: usize, state_dim: usize) -> Result<SsmWeights> {
    Ok(SsmWeights {
        channels: ch,
        state_dim,
        a_log: src.take(&format!("{name}.a_log"), &[ch, state_dim], Init::LogRamp { period: state_dim })?,
        d: src.take(&format!("{name}.d"), &[ch], Init::Ones)?,
        w_b: src.take(&format!("{name}.w_b"), &[state_dim, ch], Init::Uniform { fan_in: ch })?,
        w_c: src.take(&format!("{name}.w_c"), &[state_dim, ch], Init::Uniform { fan_in: ch })?,
        w_dt: src.take(&format!("{name}.w_dt"), &[ch, ch], Init::Uniform { fan_in: ch })?,
        b_dt: src.take(&format!("{name}.b_dt"), &[ch], Init::StepBias)?,
    })
}
