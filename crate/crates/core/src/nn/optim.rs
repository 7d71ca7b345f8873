use candle_core::{backprop::GradStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Cosine,
}

/// Linear warm-up followed by a constant or cosine-decayed learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup: usize,
    pub total: usize,
    pub kind: ScheduleKind,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self { base, warmup: 0, total: 1, kind: ScheduleKind::Constant }
    }

    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.base * (step + 1) as f64 / self.warmup as f64;
        }
        match self.kind {
            ScheduleKind::Constant => self.base,
            ScheduleKind::Cosine => {
                let span = self.total.saturating_sub(self.warmup).max(1) as f64;
                let progress = ((step - self.warmup) as f64 / span).min(1.);
                0.5 * self.base * (1. + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_grad_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, clip_grad_norm: Some(1.0) }
    }
}

/// AdamW with exposed moment buffers so they can be checkpointed.
#[derive(Clone, Debug)]
pub struct AdamW {
    vars: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: usize,
    cfg: AdamWConfig,
}

impl AdamW {
    pub fn new(vars: Vec<(String, Var)>, cfg: AdamWConfig) -> Result<Self> {
        let m = vars.iter().map(|(_, v)| v.zeros_like()).collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self { vars, m, v, step: 0, cfg })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Backpropagates `loss` and applies one update. Returns the pre-clip gradient norm.
    pub fn backward_step(&mut self, loss: &Tensor, lr: f64) -> Result<f64> {
        let grads = loss.backward()?;
        self.step(&grads, lr)
    }

    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<f64> {
        let mut sq = 0f64;
        let gs: Vec<Option<Tensor>> = self.vars.iter().map(|(_, v)| grads.get(v).cloned()).collect();
        for g in gs.iter().flatten() {
            sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let scale = match self.cfg.clip_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.,
        };
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1. - b1.powi(t);
        let bc2 = 1. - b2.powi(t);
        for (i, g) in gs.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let g = (g * scale)?;
            let var = &self.vars[i].1;
            self.m[i] = ((&self.m[i] * b1)? + (&g * (1. - b1))?)?;
            self.v[i] = ((&self.v[i] * b2)? + (g.sqr()? * (1. - b2))?)?;
            let update = ((&self.m[i] / bc1)? / ((&self.v[i] / bc2)?.sqrt()? + self.cfg.eps)?)?;
            let mut next = (var.as_tensor() - (update * lr)?)?;
            if self.cfg.weight_decay > 0. {
                next = (next - (var.as_tensor() * (lr * self.cfg.weight_decay))?)?;
            }
            var.set(&next)?;
        }
        Ok(norm)
    }

    pub(crate) fn state(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.vars.iter().zip(self.m.iter().zip(self.v.iter())).map(|((n, _), (m, v))| (n.as_str(), m, v))
    }

    pub(crate) fn restore(&mut self, step: usize, moments: impl Fn(&str) -> Option<(Tensor, Tensor)>) -> Result<()> {
        for (i, (name, _)) in self.vars.iter().enumerate() {
            let (m, v) = moments(name).ok_or_else(|| Error::MissingKey(format!("optimizer state for {name}")))?;
            self.m[i] = m;
            self.v[i] = v;
        }
        self.step = step;
        Ok(())
    }
}
