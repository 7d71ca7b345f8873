use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    #[default]
    Linear,
}

/// DDPM coefficients, indexed by step `t ∈ 1..=T`; `alpha_bar(0) = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1. - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Variance of `q(z_{t-1} | z_t, z_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1. - self.alpha_bar(t - 1)) / (1. - self.alpha_bar(t))
    }
}

pub fn make_noise_schedule(steps: usize, beta_start: f64, beta_end: f64, kind: BetaSchedule) -> Result<NoiseSchedule> {
    ensure!(steps >= 2, "noise schedule needs at least 2 steps, got {steps}");
    ensure!(
        0. < beta_start && beta_start <= beta_end && beta_end < 1.,
        "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
    );
    let betas: Vec<f64> = match kind {
        BetaSchedule::Linear => (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect(),
    };
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1f64;
    for b in &betas {
        acc *= 1. - b;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule { betas, alpha_bars })
}

/// `√ᾱ_t·z0 + √(1−ᾱ_t)·ε` for a single step `t` (0 allowed as the identity endpoint).
pub fn q_sample(z0: &Tensor, t: usize, eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    ensure!(t <= schedule.steps(), "step {t} outside 0..={}", schedule.steps());
    ensure!(z0.shape() == eps.shape(), "noise shape {:?} vs latent {:?}", eps.shape(), z0.shape());
    let ab = schedule.alpha_bar(t);
    Ok(((z0 * ab.sqrt())? + (eps * (1. - ab).sqrt())?)?)
}

/// Per-sample forward process: `z0`, `eps` are `[B, ...]`, `steps` has `B` entries.
pub fn q_sample_batch(z0: &Tensor, steps: &[usize], eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    ensure!(z0.shape() == eps.shape(), "noise shape {:?} vs latent {:?}", eps.shape(), z0.shape());
    let b = z0.dim(0)?;
    ensure!(steps.len() == b, "{} steps for a batch of {b}", steps.len());
    ensure!(steps.iter().all(|&t| t <= schedule.steps()), "step outside 0..={}", schedule.steps());
    let mut shape = vec![b];
    shape.extend(std::iter::repeat_n(1, z0.rank() - 1));
    let coef = |f: &dyn Fn(f64) -> f64| -> candle_core::Result<Tensor> {
        let v: Vec<f64> = steps.iter().map(|&t| f(schedule.alpha_bar(t))).collect();
        Tensor::from_vec(v, shape.as_slice(), z0.device())?.to_dtype(z0.dtype())
    };
    let a = coef(&|ab| ab.sqrt())?;
    let s = coef(&|ab| (1. - ab).sqrt())?;
    Ok((z0.broadcast_mul(&a)? + eps.broadcast_mul(&s)?)?)
}
