use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the re-identification term.
    pub lambda1: f64,
    /// Weight of the pseudo-flow term.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1., lambda2: 0.01 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lambda1 >= 0. && self.lambda2 >= 0. && self.lambda1.is_finite() && self.lambda2.is_finite(),
            "loss weights must be finite and non-negative, got ({}, {})",
            self.lambda1,
            self.lambda2
        );
        Ok(())
    }
}

fn check_term(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss term {name} = {v}")));
    }
    ensure!(v >= 0., "loss term {name} is negative: {v}");
    Ok(())
}

/// `l_lap + λ1·l_reid + λ2·l_flow`.
pub fn total_loss(l_lap: f64, l_reid: f64, l_flow: f64, w: &LossWeights) -> Result<f64> {
    check_term("l_lap", l_lap)?;
    check_term("l_reid", l_reid)?;
    check_term("l_flow", l_flow)?;
    w.validate()?;
    Ok(l_lap + w.lambda1 * l_reid + w.lambda2 * l_flow)
}

/// Differentiable counterpart of [`total_loss`]; absent terms count as zero.
pub fn total_loss_tensor(l_lap: &Tensor, l_reid: Option<&Tensor>, l_flow: Option<&Tensor>, w: &LossWeights) -> Result<Tensor> {
    let mut total = l_lap.clone();
    if let Some(r) = l_reid {
        total = (total + (r * w.lambda1)?)?;
    }
    if let Some(f) = l_flow {
        total = (total + (f * w.lambda2)?)?;
    }
    Ok(total)
}
