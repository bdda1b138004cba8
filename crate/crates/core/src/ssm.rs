//! Selective state-space scan and its 2D polygon-scan composition.
//!
//! Per channel the recurrence is the zero-order-hold discretised diagonal
//! system
//!
//! ```text
//! h_t = exp(Δ_t A) ⊙ h_{t-1} + ((exp(Δ_t A) - 1) / A) ⊙ B_t · x_t
//! y_t = ⟨C_t, h_t⟩ + D · x_t
//! ```
//!
//! with `h_0 = 0`. `B_t`, `C_t` are shared across channels; `Δ_t` and `D` are
//! per channel. Sequences are stored channel-major as `C × L` tensors.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::nn::softplus;
use crate::scan::{cross_merge, cross_scan, scan_orders, PolygonSpec, ScanOrder};
use crate::tensor::Tensor;

/// Below this magnitude of `A` the input gain uses its `Δ · B` limit.
pub const ZOH_LIMIT: f64 = 1e-8;

/// Concrete per-step parameters for one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    pub channels: usize,
    pub state_dim: usize,
    pub len: usize,
    /// `C × N` continuous-time diagonal state matrix.
    pub a: Vec<f64>,
    /// `L × N` input matrix per step.
    pub b: Vec<f64>,
    /// `L × N` output matrix per step.
    pub c: Vec<f64>,
    /// Skip coefficient per channel.
    pub d: Vec<f64>,
    /// `C × L` step sizes.
    pub delta: Vec<f64>,
}

impl SsmParams {
    fn validate(&self) -> Result<()> {
        let (c, n, l) = (self.channels, self.state_dim, self.len);
        if n == 0 {
            return invalid("state_dim must be at least 1");
        }
        if self.a.len() != c * n
            || self.b.len() != l * n
            || self.c.len() != l * n
            || self.d.len() != c
            || self.delta.len() != c * l
        {
            return invalid(format!("ssm parameter sizes do not match C={c} N={n} L={l}"));
        }
        if let Some(bad) = self.delta.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return invalid(format!("step size must be positive, got {bad}"));
        }
        if self.a.iter().any(|a| !a.is_finite()) {
            return invalid("state matrix entries must be finite");
        }
        Ok(())
    }
}

#[inline]
fn zoh(a: f64, delta: f64) -> (f64, f64) {
    let da = delta * a;
    let gain = if a.abs() < ZOH_LIMIT { delta } else { da.exp_m1() / a };
    (da.exp(), gain)
}

/// Zero-order-hold discretisation of a diagonal system.
pub fn discretize(a: &[f64], b: &[f64], delta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(delta > 0.0) || !delta.is_finite() {
        return invalid(format!("step size must be positive, got {delta}"));
    }
    if a.len() != b.len() {
        return invalid(format!("A has {} entries, B has {}", a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&ai, &bi)| {
            let (a_bar, gain) = zoh(ai, delta);
            (a_bar, gain * bi)
        })
        .unzip())
}

/// Runs the recurrence over a `C × L` input sequence.
pub fn selective_scan(x: &Tensor, params: &SsmParams) -> Result<Tensor> {
    let (c, l) = x.dims2()?;
    if c != params.channels || l != params.len {
        return invalid(format!(
            "input is {c}×{l}, parameters expect {}×{}",
            params.channels, params.len
        ));
    }
    if l == 0 {
        return invalid("sequence must be non-empty");
    }
    params.validate()?;
    let n = params.state_dim;
    let xs = x.data();
    let rows: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let a = &params.a[ch * n..(ch + 1) * n];
            let dt = &params.delta[ch * l..(ch + 1) * l];
            let input = &xs[ch * l..(ch + 1) * l];
            let skip = params.d[ch];
            let mut h = vec![0.0; n];
            let mut out = Vec::with_capacity(l);
            for t in 0..l {
                let bt = &params.b[t * n..(t + 1) * n];
                let ct = &params.c[t * n..(t + 1) * n];
                let mut y = 0.0;
                for k in 0..n {
                    let (a_bar, gain) = zoh(a[k], dt[t]);
                    h[k] = a_bar * h[k] + gain * bt[k] * input[t];
                    y += ct[k] * h[k];
                }
                out.push(y + skip * input[t]);
            }
            out
        })
        .collect();
    Tensor::from_vec(&[c, l], rows.concat())
}

/// Learnable weights of one selective-scan direction. `B_t`, `C_t` and `Δ_t`
/// are linear projections of the input at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmWeights {
    pub channels: usize,
    pub state_dim: usize,
    /// `C × N`; the state matrix is `A = -exp(a_log)`.
    pub a_log: Vec<f64>,
    /// `C` skip coefficients.
    pub d: Vec<f64>,
    /// `N × C` projection producing `B_t`.
    pub w_b: Vec<f64>,
    /// `N × C` projection producing `C_t`.
    pub w_c: Vec<f64>,
    /// `C × C` projection producing the pre-softplus step size.
    pub w_dt: Vec<f64>,
    /// `C` step-size biases.
    pub b_dt: Vec<f64>,
}

impl SsmWeights {
    pub fn param_count(channels: usize, state_dim: usize) -> usize {
        3 * channels * state_dim + channels * channels + 2 * channels
    }

    /// Zero projections, `A = -(1..=N)` per channel, `D = 1` and a constant
    /// step size `softplus(b_dt)`.
    pub fn neutral(channels: usize, state_dim: usize, b_dt: f64) -> Self {
        let a_log = (0..channels)
            .flat_map(|_| (1..=state_dim).map(|k| (k as f64).ln()))
            .collect();
        Self {
            channels,
            state_dim,
            a_log,
            d: vec![1.0; channels],
            w_b: vec![0.0; state_dim * channels],
            w_c: vec![0.0; state_dim * channels],
            w_dt: vec![0.0; channels * channels],
            b_dt: vec![b_dt; channels],
        }
    }

    pub fn state_matrix(&self) -> Vec<f64> {
        self.a_log.iter().map(|v| -v.exp()).collect()
    }

    /// Projects a `C × L` sequence into concrete scan parameters.
    pub fn params_for(&self, x: &Tensor) -> Result<SsmParams> {
        let (c, l) = x.dims2()?;
        if c != self.channels {
            return invalid(format!("ssm weights for {} channels, got {c}", self.channels));
        }
        let n = self.state_dim;
        let xs = x.data();
        let mut b = vec![0.0; l * n];
        let mut cm = vec![0.0; l * n];
        let mut delta = vec![0.0; c * l];
        for t in 0..l {
            for k in 0..n {
                let (mut sb, mut sc) = (0.0, 0.0);
                for ch in 0..c {
                    let v = xs[ch * l + t];
                    sb += self.w_b[k * c + ch] * v;
                    sc += self.w_c[k * c + ch] * v;
                }
                b[t * n + k] = sb;
                cm[t * n + k] = sc;
            }
            for o in 0..c {
                let mut s = self.b_dt[o];
                for ch in 0..c {
                    s += self.w_dt[o * c + ch] * xs[ch * l + t];
                }
                // softplus underflows to 0 only for s < -745; keep Δ > 0
                delta[o * l + t] = softplus(s).max(f64::MIN_POSITIVE);
            }
        }
        Ok(SsmParams {
            channels: c,
            state_dim: n,
            len: l,
            a: self.state_matrix(),
            b,
            c: cm,
            d: self.d.clone(),
            delta,
        })
    }

    pub fn scan(&self, x: &Tensor) -> Result<Tensor> {
        selective_scan(x, &self.params_for(x)?)
    }
}

/// Cross-scan along four polygon variants, one selective scan per
/// direction, then cross-merge.
pub fn ps_ss2d(feature: &Tensor, spec: &PolygonSpec, weights: &[SsmWeights; 4]) -> Result<Tensor> {
    let (_, h, w) = feature.dims3()?;
    let orders = scan_orders(h, w, spec)?;
    ps_ss2d_with_orders(feature, &orders, weights)
}

pub fn ps_ss2d_with_orders(feature: &Tensor, orders: &[ScanOrder], weights: &[SsmWeights]) -> Result<Tensor> {
    if orders.len() != weights.len() {
        return invalid(format!("{} scan orders for {} weight sets", orders.len(), weights.len()));
    }
    let seqs = cross_scan(feature, orders)?;
    let outs = seqs
        .par_iter()
        .zip(weights.par_iter())
        .map(|(s, wt)| wt.scan(s))
        .collect::<Result<Vec<_>>>()?;
    cross_merge(&outs, orders)
}
