use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::Denoiser;
use super::latent::LatentVideo;
use super::noise::gaussian_like;
use super::schedule::{q_sample_batch, NoiseSchedule};
use crate::data::FeatureStore;
use crate::error::ensure;
use crate::nn::{scalar, AdamW, AdamWConfig, LrSchedule, ParamStore, ScheduleKind};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LvdmTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Frames per training window; clips longer than this are cropped at a random start.
    pub clip_frames: usize,
    pub lr: f64,
    pub warmup: usize,
    pub schedule: ScheduleKind,
    /// Probability of replacing the motion vector by the null embedding.
    pub p_drop: f64,
    pub seed: u64,
}

impl Default for LvdmTrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 4, clip_frames: 8, lr: 1e-3, warmup: 100, schedule: ScheduleKind::Cosine, p_drop: 0.1, seed: 0 }
    }
}

/// Checks that every latent clip has a motion vector; lists all missing ids otherwise.
pub fn check_motion_ids(latents: &[LatentVideo], motion: &FeatureStore) -> Result<()> {
    if motion.is_empty() {
        return Err(Error::Config("motion store is empty".into()));
    }
    let missing: Vec<&str> = latents.iter().map(|l| l.id.as_str()).filter(|id| !motion.contains(id)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingKey(format!("motion vectors for video ids [{}]", missing.join(", "))));
    }
    Ok(())
}

pub struct LvdmTrainer<'a> {
    model: &'a Denoiser,
    params: &'a ParamStore,
    schedule: &'a NoiseSchedule,
    opt: AdamW,
    lr: LrSchedule,
    cfg: LvdmTrainConfig,
}

impl<'a> LvdmTrainer<'a> {
    pub fn new(model: &'a Denoiser, params: &'a ParamStore, schedule: &'a NoiseSchedule, cfg: LvdmTrainConfig) -> Result<Self> {
        ensure!(cfg.batch_size > 0 && cfg.clip_frames > 0, "batch size and clip frames must be positive");
        ensure!((0.0..=1.0).contains(&cfg.p_drop), "p_drop must lie in [0, 1]");
        let opt = AdamW::new(params.vars(), AdamWConfig::default())?;
        let lr = LrSchedule { base: cfg.lr, warmup: cfg.warmup, total: cfg.steps, kind: cfg.schedule };
        Ok(Self { model, params, schedule, opt, lr, cfg })
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.opt
    }

    pub fn optimizer_mut(&mut self) -> &mut AdamW {
        &mut self.opt
    }

    pub fn step_count(&self) -> usize {
        self.opt.step_count()
    }

    pub fn into_optimizer(self) -> AdamW {
        self.opt
    }

    /// One update on a batch drawn with an RNG seeded by the step index.
    pub fn step(&mut self, latents: &[LatentVideo], motion: &FeatureStore) -> Result<f64> {
        ensure!(!latents.is_empty(), "no latent clips");
        let step = self.opt.step_count();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step as u64 + 1);
        let dtype = self.params.dtype();
        let frames = latents.iter().map(|l| l.frames()).min().unwrap_or(0).min(self.cfg.clip_frames);
        ensure!(frames > 0, "latent clips are empty");
        let (mut zs, mut conds, mut steps, mut null) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..self.cfg.batch_size {
            let clip = &latents[rng.random_range(0..latents.len())];
            let start = rng.random_range(0..=clip.frames() - frames);
            zs.push(clip.z.narrow(0, start, frames)?.to_dtype(dtype)?);
            conds.extend_from_slice(motion.get(&clip.id)?);
            steps.push(rng.random_range(1..=self.schedule.steps()));
            null.push(rng.random::<f64>() < self.cfg.p_drop);
        }
        let z0 = Tensor::stack(&zs, 0)?;
        let cond = Tensor::from_vec(conds, (self.cfg.batch_size, motion.dim()), &Device::Cpu)?.to_dtype(dtype)?;
        let eps = gaussian_like(&z0, &mut rng)?;
        let z_t = q_sample_batch(&z0, &steps, &eps, self.schedule)?;
        let pred = self.model.forward(&z_t, &steps, Some(&cond), Some(&null))?;
        let loss = diffusion_mse(&pred, &eps)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("diffusion loss at step {step}")));
        }
        self.opt.backward_step(&loss, self.lr.at(step))?;
        Ok(value)
    }
}

/// Runs `cfg.steps` updates; returns the per-step losses.
pub fn train_lvdm(
    model: &Denoiser,
    params: &ParamStore,
    latents: &[LatentVideo],
    motion: &FeatureStore,
    schedule: &NoiseSchedule,
    cfg: &LvdmTrainConfig,
) -> Result<Vec<f64>> {
    check_motion_ids(latents, motion)?;
    ensure!(
        motion.dim() == model.config().conditioning_dim,
        "motion vectors have dim {}, denoiser expects {}",
        motion.dim(),
        model.config().conditioning_dim
    );
    let mut trainer = LvdmTrainer::new(model, params, schedule, cfg.clone())?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let l = trainer.step(latents, motion)?;
        if step % 100 == 0 {
            log::debug!("lvdm step {step} loss {l:.5}");
        }
        losses.push(l);
    }
    Ok(losses)
}

/// MSE between true and predicted noise for a given batch, differentiable in `pred`.
pub fn diffusion_mse(pred: &Tensor, eps: &Tensor) -> Result<Tensor> {
    ensure!(pred.shape() == eps.shape(), "prediction {:?} vs noise {:?}", pred.shape(), eps.shape());
    Ok((pred - eps)?.sqr()?.mean_all()?)
}

