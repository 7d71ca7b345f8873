use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::Denoiser;
use super::noise::gaussian;
use super::schedule::NoiseSchedule;
use super::vae::Vae;
use crate::data::VideoClip;
use crate::error::ensure;
use crate::nn::tensor_to_clip;
use crate::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// DDPM reverse chain with posterior variance noise.
    #[default]
    Ancestral,
    /// DDIM with η = 0.
    Deterministic,
}

impl std::str::FromStr for Sampler {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ancestral" => Ok(Self::Ancestral),
            "deterministic" => Ok(Self::Deterministic),
            other => Err(crate::Error::Config(format!("unknown sampler `{other}` (ancestral | deterministic)"))),
        }
    }
}

/// Runs the reverse process from seeded Gaussian latents `[frames, C_z, h, w]`.
pub fn sample_latents(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    cond: Option<&[f32]>,
    frames: usize,
    latent_hw: (usize, usize),
    sampler: Sampler,
    seed: u64,
    dtype: DType,
) -> Result<Tensor> {
    ensure!(frames >= 1, "need at least one frame, got {frames}");
    let cz = model.config().latent_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = gaussian(&[1, frames, cz, latent_hw.0, latent_hw.1], dtype, &mut rng)?;
    let cond = cond
        .map(|c| -> Result<Tensor> { Ok(Tensor::from_slice(c, (1, c.len()), &Device::Cpu)?.to_dtype(dtype)?) })
        .transpose()?;
    for t in (1..=schedule.steps()).rev() {
        let eps = model.forward(&z, &[t], cond.as_ref(), None)?.detach();
        let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t - 1));
        z = match sampler {
            Sampler::Ancestral => {
                let coef = schedule.beta(t) / (1. - ab).sqrt();
                let mean = ((&z - (eps * coef)?)? / schedule.alpha(t).sqrt())?;
                if t > 1 {
                    let noise = gaussian(z.dims(), dtype, &mut rng)?;
                    (mean + (noise * schedule.posterior_variance(t).sqrt())?)?
                } else {
                    mean
                }
            }
            Sampler::Deterministic => {
                let x0 = ((&z - (&eps * (1. - ab).sqrt())?)? / ab.sqrt())?;
                ((x0 * ab_prev.sqrt())? + (eps * (1. - ab_prev).sqrt())?)?
            }
        };
    }
    Ok(z.squeeze(0)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub sampler: Sampler,
    pub seed: u64,
    pub fps: f32,
}

/// Samples latents and decodes them frame by frame with the VAE.
pub fn sample_video(
    model: &Denoiser,
    vae: &Vae,
    schedule: &NoiseSchedule,
    latent_scale: f32,
    cond: Option<&[f32]>,
    cfg: &SampleConfig,
    id: &str,
    dtype: DType,
) -> Result<VideoClip> {
    ensure!(cfg.frames >= 1, "need at least one frame, got {}", cfg.frames);
    let d = super::vae::DOWNSAMPLE;
    ensure!(cfg.height % (2 * d) == 0 && cfg.width % (2 * d) == 0, "sample size {}x{} must be a multiple of {}", cfg.height, cfg.width, 2 * d);
    ensure!(latent_scale > 0., "latent scale must be positive");
    let z = sample_latents(model, schedule, cond, cfg.frames, (cfg.height / d, cfg.width / d), cfg.sampler, cfg.seed, dtype)?;
    let frames = vae.decode(&(z / latent_scale as f64)?)?;
    let clip = tensor_to_clip(&frames)?;
    VideoClip::new(id, clip, cfg.fps)
}
