//! Space–frequency collaborative attention (SFCAM).
//!
//! Three branches look at the same input: a multi-scale convolutional local
//! branch, a polygon-scan state-space global branch, and a Haar wavelet
//! branch split into low and high frequencies. Local/high and global/low
//! pairs are aligned by bidirectional cross-attention fusion (BCFM), then
//! concatenated and projected back onto the input with residual adds.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::frequency::{wavelet_branch, WaveletBranchWeights};
use crate::nn::{sigmoid, silu, Conv2d, LayerNorm, DEFAULT_LN_EPS};
use crate::params::{self, ParamSource};
use crate::scan::{scan_orders, PolygonSpec};
use crate::ssm::{ps_ss2d_with_orders, SsmWeights};
use crate::tensor::Tensor;

/// How the correlation gate collapses `LN(f_a) ⊙ LN(f_b)` to one map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateReduction {
    #[default]
    Mean,
    /// Literal product over channels; underflows quickly for wide maps.
    Product,
}

impl GateReduction {
    pub fn name(self) -> &'static str {
        match self {
            GateReduction::Mean => "mean",
            GateReduction::Product => "product",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub num_heads: usize,
    pub head_dim: usize,
    pub ln_epsilon: f64,
    pub gate_reduction: GateReduction,
}

impl AttentionConfig {
    pub fn new(num_heads: usize, head_dim: usize) -> Self {
        Self {
            num_heads,
            head_dim,
            ln_epsilon: DEFAULT_LN_EPS,
            gate_reduction: GateReduction::Mean,
        }
    }

    /// Splits `channels` evenly over `num_heads`.
    pub fn for_channels(channels: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || channels % num_heads != 0 {
            return invalid(format!("{channels} channels cannot be split over {num_heads} heads"));
        }
        Ok(Self::new(num_heads, channels / num_heads))
    }

    pub fn channels(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.num_heads == 0 || self.head_dim == 0 {
            return invalid("attention needs at least one head of width one");
        }
        if self.channels() != channels {
            return invalid(format!(
                "{} heads × {} dims = {} does not match {channels} channels",
                self.num_heads,
                self.head_dim,
                self.channels()
            ));
        }
        if !(self.ln_epsilon > 0.0) {
            return invalid("layer norm epsilon must be positive");
        }
        Ok(())
    }
}

/// Max-subtracted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return invalid("softmax of an empty vector");
    }
    if v.iter().any(|x| !x.is_finite()) {
        return invalid("softmax input must be finite");
    }
    Ok(softmax_unchecked(v))
}

fn softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

// --------------------------------------------------------------------------
// local branch

/// `1×1 → Cat(1×1, 3×3, 5×5) → 1×1 (3C→C) → 3×3`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBranchWeights {
    pub reduce: Conv2d,
    pub k1: Conv2d,
    pub k3: Conv2d,
    pub k5: Conv2d,
    pub fuse: Conv2d,
    pub refine: Conv2d,
}

impl LocalBranchWeights {
    pub fn build(src: &mut impl ParamSource, name: &str, ch: usize) -> Result<Self> {
        Ok(Self {
            reduce: params::conv(src, &format!("{name}.reduce"), ch, ch, 1)?,
            k1: params::conv(src, &format!("{name}.k1"), ch, ch, 1)?,
            k3: params::conv(src, &format!("{name}.k3"), ch, ch, 3)?,
            k5: params::conv(src, &format!("{name}.k5"), ch, ch, 5)?,
            fuse: params::conv(src, &format!("{name}.fuse"), 3 * ch, ch, 1)?,
            refine: params::conv(src, &format!("{name}.refine"), ch, ch, 3)?,
        })
    }

    pub fn dirac(ch: usize) -> Self {
        Self {
            reduce: Conv2d::dirac(ch, ch, 1),
            k1: Conv2d::dirac(ch, ch, 1),
            k3: Conv2d::dirac(ch, ch, 3),
            k5: Conv2d::dirac(ch, ch, 5),
            fuse: Conv2d::dirac(3 * ch, ch, 1),
            refine: Conv2d::dirac(ch, ch, 3),
        }
    }
}

pub fn local_branch(f_in: &Tensor, w: &LocalBranchWeights) -> Result<Tensor> {
    let fb = w.reduce.forward(f_in)?;
    let fc = Tensor::concat_channels(&[&w.k1.forward(&fb)?, &w.k3.forward(&fb)?, &w.k5.forward(&fb)?])?;
    w.refine.forward(&w.fuse.forward(&fc)?)
}

// --------------------------------------------------------------------------
// global branch

/// `X1 = LN(PS-SS2D(DWConv(LN(x))))`, `X2 = SiLU(Linear(LN(x)))`,
/// output `X1 ⊙ X2 + DWConv(LN(x))`. The input norm and depthwise conv are
/// shared between the gated path and the residual path.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalBranchWeights {
    pub ln_in: LayerNorm,
    pub dwconv: Conv2d,
    pub ssm: [SsmWeights; 4],
    pub ln_out: LayerNorm,
    pub linear: Conv2d,
}

impl GlobalBranchWeights {
    pub fn build(src: &mut impl ParamSource, name: &str, ch: usize, state_dim: usize, eps: f64) -> Result<Self> {
        let ln_in = params::layer_norm(src, &format!("{name}.ln_in"), ch, eps)?;
        let dwconv = params::depthwise(src, &format!("{name}.dwconv"), ch, 3)?;
        let ssm = [
            params::ssm(src, &format!("{name}.ssm0"), ch, state_dim)?,
            params::ssm(src, &format!("{name}.ssm1"), ch, state_dim)?,
            params::ssm(src, &format!("{name}.ssm2"), ch, state_dim)?,
            params::ssm(src, &format!("{name}.ssm3"), ch, state_dim)?,
        ];
        Ok(Self {
            ln_in,
            dwconv,
            ssm,
            ln_out: params::layer_norm(src, &format!("{name}.ln_out"), ch, eps)?,
            linear: params::conv(src, &format!("{name}.linear"), ch, ch, 1)?,
        })
    }
}

pub fn global_branch(f_in: &Tensor, w: &GlobalBranchWeights, spec: &PolygonSpec) -> Result<Tensor> {
    let (_, h, wd) = f_in.dims3()?;
    let orders = scan_orders(h, wd, spec)?;
    let normed = w.ln_in.forward(f_in)?;
    let local = w.dwconv.forward(&normed)?;
    let x1 = w.ln_out.forward(&ps_ss2d_with_orders(&local, &orders, &w.ssm)?)?;
    let x2 = w.linear.forward(&normed)?.map(silu);
    x1.mul(&x2)?.add(&local)
}

// --------------------------------------------------------------------------
// BCFM

/// Correlation gate: two norms, then a `1×1 → 3×3` single-map refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct GateWeights {
    pub ln_a: LayerNorm,
    pub ln_b: LayerNorm,
    pub squeeze: Conv2d,
    pub refine: Conv2d,
}

impl GateWeights {
    pub fn build(src: &mut impl ParamSource, name: &str, ch: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            ln_a: params::layer_norm(src, &format!("{name}.ln_a"), ch, eps)?,
            ln_b: params::layer_norm(src, &format!("{name}.ln_b"), ch, eps)?,
            squeeze: params::conv(src, &format!("{name}.squeeze"), 1, 1, 1)?,
            refine: params::conv(src, &format!("{name}.refine"), 1, 1, 3)?,
        })
    }
}

/// Returns `(f_a ⊙ w + f_a, f_b ⊙ w + f_b, w)` with the single-channel gate
/// `w = σ(Conv(reduce_c(LN(f_a) ⊙ LN(f_b))))` broadcast over channels.
pub fn correlation_gate(
    f_a: &Tensor,
    f_b: &Tensor,
    w: &GateWeights,
    reduction: GateReduction,
) -> Result<(Tensor, Tensor, Tensor)> {
    f_a.check_same_shape(f_b)?;
    let (c, h, wd) = f_a.dims3()?;
    let prod = w.ln_a.forward(f_a)?.mul(&w.ln_b.forward(f_b)?)?;
    let plane = h * wd;
    let reduced: Vec<f64> = (0..plane)
        .map(|p| {
            let vals = (0..c).map(|ci| prod.data()[ci * plane + p]);
            match reduction {
                GateReduction::Mean => vals.sum::<f64>() / c as f64,
                GateReduction::Product => vals.product(),
            }
        })
        .collect();
    let reduced = Tensor::from_vec(&[1, h, wd], reduced)?;
    let gate = w.refine.forward(&w.squeeze.forward(&reduced)?)?.map(sigmoid);
    let apply = |f: &Tensor| {
        Tensor::from_fn3(c, h, wd, |ci, y, x| {
            let v = f.at3(ci, y, x);
            v * gate.at3(0, y, x) + v
        })
    };
    Ok((apply(f_a), apply(f_b), gate))
}

/// Splits the output of a `C → 3C` per-position projection into `(Q, K, V)`.
fn project_qkv(x: &Tensor, qkv: &Conv2d) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, _, _) = x.dims3()?;
    if qkv.kernel != 1 || qkv.out_ch != 3 * c {
        return invalid(format!("qkv projection must be 1×1 {c}→{}", 3 * c));
    }
    let all = qkv.forward(x)?;
    Ok((all.slice_channels(0, c)?, all.slice_channels(c, c)?, all.slice_channels(2 * c, c)?))
}

/// Multi-head attention with spatial positions as tokens:
/// `softmax(Q K^T / √d_k) V` per head, heads concatenated along channels.
pub fn attend(q: &Tensor, k: &Tensor, v: &Tensor, cfg: &AttentionConfig) -> Result<Tensor> {
    q.check_same_shape(k)?;
    q.check_same_shape(v)?;
    let (c, h, w) = q.dims3()?;
    cfg.validate(c)?;
    let tokens = h * w;
    let dk = cfg.head_dim;
    let scale = 1.0 / (dk as f64).sqrt();
    let (qs, ks, vs) = (q.data(), k.data(), v.data());
    // one row per (head, query token)
    let rows: Vec<Vec<f64>> = (0..cfg.num_heads * tokens)
        .into_par_iter()
        .map(|row| {
            let (head, t) = (row / tokens, row % tokens);
            let chans = head * dk..(head + 1) * dk;
            let scores: Vec<f64> = (0..tokens)
                .map(|u| chans.clone().map(|ci| qs[ci * tokens + t] * ks[ci * tokens + u]).sum::<f64>() * scale)
                .collect();
            let p = softmax_unchecked(&scores);
            chans
                .map(|ci| (0..tokens).map(|u| p[u] * vs[ci * tokens + u]).sum())
                .collect()
        })
        .collect();
    let mut out = Tensor::zeros(&[c, h, w]);
    let dst = out.data_mut();
    for (row, vals) in rows.iter().enumerate() {
        let (head, t) = (row / tokens, row % tokens);
        for (j, val) in vals.iter().enumerate() {
            dst[(head * dk + j) * tokens + t] = *val;
        }
    }
    Ok(out)
}

/// Queries from `f_q_src`, keys and values from `f_kv_src`, one shared
/// projection.
pub fn cross_attention(f_q_src: &Tensor, f_kv_src: &Tensor, cfg: &AttentionConfig, qkv: &Conv2d) -> Result<Tensor> {
    f_q_src.check_same_shape(f_kv_src)?;
    cfg.validate(f_q_src.dims3()?.0)?;
    let (q, _, _) = project_qkv(f_q_src, qkv)?;
    let (_, k, v) = project_qkv(f_kv_src, qkv)?;
    attend(&q, &k, &v, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcfmWeights {
    pub gate: GateWeights,
    pub qkv: Conv2d,
}

impl BcfmWeights {
    pub fn build(src: &mut impl ParamSource, name: &str, ch: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gate: GateWeights::build(src, &format!("{name}.gate"), ch, eps)?,
            qkv: params::conv(src, &format!("{name}.qkv"), ch, 3 * ch, 1)?,
        })
    }
}

/// Gated pair, then each side queries the other side's keys and values.
pub fn bcfm(f_a: &Tensor, f_b: &Tensor, cfg: &AttentionConfig, w: &BcfmWeights) -> Result<(Tensor, Tensor)> {
    cfg.validate(f_a.dims3()?.0)?;
    let (a_hat, b_hat, _) = correlation_gate(f_a, f_b, &w.gate, cfg.gate_reduction)?;
    let (qa, ka, va) = project_qkv(&a_hat, &w.qkv)?;
    let (qb, kb, vb) = project_qkv(&b_hat, &w.qkv)?;
    Ok((attend(&qa, &kb, &vb, cfg)?, attend(&qb, &ka, &va, cfg)?))
}

// --------------------------------------------------------------------------
// SFCAM

#[derive(Debug, Clone, PartialEq)]
pub struct SfcamWeights {
    pub local: LocalBranchWeights,
    pub global: GlobalBranchWeights,
    pub wavelet: WaveletBranchWeights,
    pub local_high: BcfmWeights,
    pub global_low: BcfmWeights,
    /// `4C → C` projection of the concatenated cross features.
    pub fuse: Conv2d,
    pub refine: Conv2d,
}

impl SfcamWeights {
    pub fn build(src: &mut impl ParamSource, name: &str, ch: usize, state_dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            local: LocalBranchWeights::build(src, &format!("{name}.local"), ch)?,
            global: GlobalBranchWeights::build(src, &format!("{name}.global"), ch, state_dim, eps)?,
            wavelet: WaveletBranchWeights::build(src, &format!("{name}.wavelet"), ch)?,
            local_high: BcfmWeights::build(src, &format!("{name}.bcfm_lh"), ch, eps)?,
            global_low: BcfmWeights::build(src, &format!("{name}.bcfm_gl"), ch, eps)?,
            fuse: params::conv(src, &format!("{name}.fuse"), 4 * ch, ch, 1)?,
            refine: params::conv(src, &format!("{name}.refine"), ch, ch, 3)?,
        })
    }

    pub fn param_count(ch: usize, state_dim: usize) -> usize {
        let mut rec = params::LayoutRecorder::default();
        Self::build(&mut rec, "sfcam", ch, state_dim, DEFAULT_LN_EPS).expect("layout recording");
        rec.total()
    }
}

/// `F_out = Conv3×3(Conv1×1(Cat(cross features)) + F_in) + F_in`.
pub fn sfcam(f_in: &Tensor, w: &SfcamWeights, spec: &PolygonSpec, cfg: &AttentionConfig) -> Result<Tensor> {
    cfg.validate(f_in.dims3()?.0)?;
    let local = local_branch(f_in, &w.local)?;
    let global = global_branch(f_in, &w.global, spec)?;
    let (low, high) = wavelet_branch(f_in, &w.wavelet)?;
    let (local_x, high_x) = bcfm(&local, &high, cfg, &w.local_high)?;
    let (global_x, low_x) = bcfm(&global, &low, cfg, &w.global_low)?;
    let cat = Tensor::concat_channels(&[&local_x, &high_x, &global_x, &low_x])?;
    let fused = w.fuse.forward(&cat)?.add(f_in)?;
    w.refine.forward(&fused)?.add(f_in)
}
