//! Per-frame convolutional VAE with a 4× spatial downsample.

use candle_core::{DType, Module, Tensor};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::gaussian_like;
use crate::error::ensure;
use crate::nn::{frames_tensor, resize_bilinear, scalar, AdamW, AdamWConfig, Conv2d, Init, LrSchedule, ParamStore, ScheduleKind};
use crate::{Error, Result};

pub const DOWNSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub channels: usize,
    pub latent_channels: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self { channels: 32, latent_channels: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 16, lr: 2e-3, kl_weight: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Posterior {
    /// `[N, C_z, h, w]`.
    pub mean: Tensor,
    pub logvar: Tensor,
}

/// `0.5 · mean(μ² + e^{lv} − 1 − lv)`.
pub fn kl_divergence(p: &Posterior) -> Result<Tensor> {
    let lv = p.logvar.clamp(-30., 20.)?;
    Ok((((p.mean.sqr()? + lv.exp()?)? - 1.)? - lv)?.mean_all()?.affine(0.5, 0.)?)
}

#[derive(Clone, Debug)]
pub struct Vae {
    cfg: VaeConfig,
    enc: [Conv2d; 4],
    dec: [Conv2d; 4],
}

impl Vae {
    pub fn new(ps: &ParamStore, cfg: VaeConfig) -> Result<Self> {
        ensure!(cfg.channels > 0 && cfg.latent_channels > 0, "VAE widths must be positive");
        let (c, z) = (cfg.channels, cfg.latent_channels);
        let g = Init::FanIn(2f64.sqrt());
        let enc = [
            Conv2d::new(&ps.pp("enc.0"), 1, c, 3, 1, g)?,
            Conv2d::new(&ps.pp("enc.1"), c, c, 3, 2, g)?,
            Conv2d::new(&ps.pp("enc.2"), c, 2 * c, 3, 2, g)?,
            Conv2d::new(&ps.pp("enc.3"), 2 * c, 2 * z, 3, 1, Init::FanIn(1.))?,
        ];
        let dec = [
            Conv2d::new(&ps.pp("dec.0"), z, 2 * c, 3, 1, g)?,
            Conv2d::new(&ps.pp("dec.1"), 2 * c, c, 3, 1, g)?,
            Conv2d::new(&ps.pp("dec.2"), c, c, 3, 1, g)?,
            Conv2d::new(&ps.pp("dec.3"), c, 1, 3, 1, Init::FanIn(1.))?,
        ];
        Ok(Self { cfg, enc, dec })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.cfg
    }

    /// `[N, 1, H, W]` frames (values in `[0, 1]`, H and W multiples of 4) to the posterior.
    pub fn encode(&self, x: &Tensor) -> Result<Posterior> {
        let (_, c, h, w) = x.dims4()?;
        ensure!(c == 1, "VAE expects single-channel frames, got {c}");
        ensure!(h % DOWNSAMPLE == 0 && w % DOWNSAMPLE == 0, "frame size {h}x{w} not divisible by {DOWNSAMPLE}");
        let mut y = x.affine(2., -1.)?;
        for conv in &self.enc[..3] {
            y = conv.forward(&y)?.silu()?;
        }
        let out = self.enc[3].forward(&y)?;
        let z = self.cfg.latent_channels;
        Ok(Posterior { mean: out.narrow(1, 0, z)?, logvar: out.narrow(1, z, z)? })
    }

    /// Unclamped reconstruction `[N, 1, 4h, 4w]`; use [`Vae::decode`] for frames.
    pub fn decode_raw(&self, z: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = z.dims4()?;
        let mut y = self.dec[0].forward(z)?.silu()?;
        y = self.dec[1].forward(&resize_bilinear(&y, 2 * h, 2 * w)?)?.silu()?;
        y = self.dec[2].forward(&resize_bilinear(&y, 4 * h, 4 * w)?)?.silu()?;
        Ok(self.dec[3].forward(&y)?.affine(0.5, 0.5)?)
    }

    /// Frames in `[0, 1]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.decode_raw(z)?.clamp(0., 1.)?)
    }

    /// Posterior means, checked for finiteness.
    pub fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        let m = self.encode(x)?.mean;
        let s = scalar(&m.abs()?.sum_all()?)?;
        if !s.is_finite() {
            return Err(Error::NonFinite("VAE latent".into()));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, Default)]
pub struct VaeReport {
    pub losses: Vec<f64>,
    /// Optimiser state after the last step.
    pub optimizer: Option<AdamW>,
}

/// Reconstruction MSE plus weighted KL, with reparameterised latent samples.
pub fn train_vae(vae: &Vae, params: &ParamStore, frames: &[Array2<f32>], cfg: &VaeTrainConfig) -> Result<VaeReport> {
    ensure!(!frames.is_empty(), "VAE training needs frames");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(params.vars(), AdamWConfig::default())?;
    let schedule = LrSchedule { base: cfg.lr, warmup: cfg.steps / 20, total: cfg.steps, kind: ScheduleKind::Cosine };
    let mut report = VaeReport::default();
    for step in 0..cfg.steps {
        let batch: Vec<&Array2<f32>> = (0..cfg.batch_size.max(1)).map(|_| &frames[rng.random_range(0..frames.len())]).collect();
        let x = frames_tensor(batch, params.dtype())?;
        let post = vae.encode(&x)?;
        let eps = gaussian_like(&post.mean, &mut rng)?;
        let z = (&post.mean + ((&post.logvar * 0.5)?.exp()? * eps)?)?;
        let rec = (vae.decode_raw(&z)? - &x)?.sqr()?.mean_all()?;
        let loss = (rec + (kl_divergence(&post)? * cfg.kl_weight)?)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("VAE loss at step {step}")));
        }
        opt.backward_step(&loss, schedule.at(step))?;
        report.losses.push(value);
    }
    report.optimizer = Some(opt);
    Ok(report)
}

/// Encodes a `[T, H, W]` clip frame by frame into `[T, C_z, H/4, W/4]` posterior means.
pub fn encode_clip(vae: &Vae, frames: &[Array2<f32>], dtype: DType) -> Result<Tensor> {
    let mut parts = Vec::new();
    for chunk in frames.chunks(32) {
        parts.push(vae.encode_mean(&frames_tensor(chunk, dtype)?)?);
    }
    Ok(Tensor::cat(&parts, 0)?)
}
