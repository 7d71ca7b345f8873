//! Motion-conditioned latent video diffusion: per-frame VAE, DDPM schedule,
//! spatio-temporal denoiser, training loop and samplers.

mod denoiser;
mod latent;
mod noise;
mod sample;
mod schedule;
mod train;
mod vae;

pub use denoiser::{CondNorm, Denoiser, DenoiserConfig};
pub use latent::{latent_scale, LatentVideo, LATENT_HEADER};
pub use noise::{gaussian, gaussian_like};
pub use sample::{sample_latents, sample_video, SampleConfig, Sampler};
pub use schedule::{make_noise_schedule, q_sample, q_sample_batch, BetaSchedule, NoiseSchedule};
pub use train::{check_motion_ids, diffusion_mse, train_lvdm, LvdmTrainConfig, LvdmTrainer};
pub use vae::{encode_clip, kl_divergence, train_vae, Posterior, Vae, VaeConfig, VaeReport, VaeTrainConfig, DOWNSAMPLE};
