//! Simultaneous-perturbation stochastic approximation.
//!
//! Each step perturbs every coordinate at once by `±c_k`, estimates the
//! directional slope from two loss evaluations and moves against it:
//! `θ ← θ - a_k (f(θ + c_k Δ) - f(θ - c_k Δ)) / (2 c_k) · Δ`, with gains
//! `a_k = a / (k + 1 + A)^α` and `c_k = c / (k + 1)^γ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Network, ModelConfig, ParamStore};
use crate::data_io::SamplePair;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpsaConfig {
    pub steps: usize,
    /// `a`, the step size numerator.
    pub step_size: f64,
    /// `c`, the perturbation size numerator.
    pub perturb_size: f64,
    /// `A`, delays the decay of `a_k`.
    pub stability: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: 0.2,
            perturb_size: 0.05,
            stability: 20.0,
            alpha: 0.602,
            gamma: 0.101,
            seed: 0,
        }
    }
}

impl SpsaConfig {
    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.step_size) && self.perturb_size > 0.0 && ok(self.perturb_size) && ok(self.stability)) {
            return invalid("SPSA gains must be finite, with a positive perturbation");
        }
        if !(ok(self.alpha) && ok(self.gamma)) {
            return invalid("SPSA gain exponents must be finite and non-negative");
        }
        Ok(())
    }

    pub fn gains(&self, k: usize) -> (f64, f64) {
        let k = k as f64;
        (
            self.step_size / (k + 1.0 + self.stability).powf(self.alpha),
            self.perturb_size / (k + 1.0).powf(self.gamma),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpsaTrace {
    /// Loss at the starting point.
    pub initial: f64,
    /// Mean of the two perturbed losses at each step.
    pub steps: Vec<f64>,
    /// Loss at the returned point.
    pub last: f64,
}

/// Minimises `f` in place. The two perturbed evaluations of each step run in
/// parallel; the result depends only on `cfg.seed`.
pub fn spsa_minimize<F>(theta: &mut [f64], cfg: &SpsaConfig, f: F) -> Result<SpsaTrace>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let finite = |step: usize, loss: f64| {
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFiniteLoss { step, loss })
        }
    };
    let mut trace = SpsaTrace {
        initial: finite(0, f(theta)?)?,
        steps: Vec::with_capacity(cfg.steps),
        last: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut delta = vec![0.0; theta.len()];
    let (mut plus, mut minus) = (theta.to_vec(), theta.to_vec());
    for k in 0..cfg.steps {
        let (a_k, c_k) = cfg.gains(k);
        for d in delta.iter_mut() {
            *d = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        for i in 0..theta.len() {
            plus[i] = theta[i] + c_k * delta[i];
            minus[i] = theta[i] - c_k * delta[i];
        }
        let (fp, fm) = rayon::join(|| f(&plus), || f(&minus));
        let (fp, fm) = (finite(k + 1, fp?)?, finite(k + 1, fm?)?);
        let slope = (fp - fm) / (2.0 * c_k);
        for (t, d) in theta.iter_mut().zip(&delta) {
            *t -= a_k * slope * d;
        }
        trace.steps.push(0.5 * (fp + fm));
    }
    trace.last = finite(cfg.steps, f(theta)?)?;
    Ok(trace)
}

/// Trains a network on `data`, returning the updated store (rounded to
/// single precision) and the loss trace.
pub fn spsa_train(
    data: &[SamplePair],
    store: &ParamStore,
    cfg: &ModelConfig,
    spsa: &SpsaConfig,
) -> Result<(ParamStore, SpsaTrace)> {
    if data.is_empty() {
        return invalid("SPSA needs a non-empty dataset");
    }
    let mut theta = store.to_f64();
    // fail on a layout mismatch before any work
    Network::from_values(cfg, &theta)?;
    let trace = spsa_minimize(&mut theta, spsa, |v| Network::from_values(cfg, v)?.dataset_loss(data))?;
    let out = ParamStore::from_f64(store.entries().to_vec(), &theta)?;
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gains_follow_schedule() {
        let cfg = SpsaConfig { step_size: 1.0, perturb_size: 1.0, stability: 0.0, ..SpsaConfig::default() };
        let (a0, c0) = cfg.gains(0);
        assert_eq!((a0, c0), (1.0, 1.0));
        let (a3, c3) = cfg.gains(3);
        assert!((a3 - 4f64.powf(-0.602)).abs() < 1e-15 && (c3 - 4f64.powf(-0.101)).abs() < 1e-15);
    }

    #[test]
    fn zero_steps_leave_theta_alone() {
        let mut theta = vec![0.1, -0.0, 3.0];
        let cfg = SpsaConfig { steps: 0, ..SpsaConfig::default() };
        let trace = spsa_minimize(&mut theta, &cfg, |v| Ok(v.iter().sum())).unwrap();
        assert_eq!(theta, vec![0.1, -0.0, 3.0]);
        assert!(trace.steps.is_empty());
        assert_eq!(trace.initial, trace.last);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut theta = vec![1.0];
        let err = spsa_minimize(&mut theta, &SpsaConfig::default(), |v| Ok(if v[0] > 1.0 { f64::NAN } else { 0.0 }));
        assert!(matches!(err, Err(Error::NonFiniteLoss { step: 1, .. })));
    }

    #[test]
    fn linear_slope_is_exact_along_the_direction() {
        // for f(w) = g·w the symmetric difference recovers Δ·g exactly, so
        // one step moves by a_0 (Δ·g) Δ
        let g = [0.5, -0.25];
        let cfg = SpsaConfig { steps: 1, step_size: 0.5, perturb_size: 0.125, stability: 0.0, ..SpsaConfig::default() };
        let mut theta = vec![0.0, 0.0];
        spsa_minimize(&mut theta, &cfg, |v| Ok(g[0] * v[0] + g[1] * v[1])).unwrap();
        let candidates: Vec<Vec<f64>> = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]
            .iter()
            .map(|d| {
                let proj = g[0] * d[0] + g[1] * d[1];
                vec![-0.5 * proj * d[0], -0.5 * proj * d[1]]
            })
            .collect();
        assert!(candidates.contains(&theta), "{theta:?}");
    }
}
