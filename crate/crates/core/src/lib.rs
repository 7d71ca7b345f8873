//! Label-free motion-conditioned video synthesis.
//!
//! The crate is organised along the pipeline:
//!
//! * [`data`]: clips, phantoms with analytic motion, frame-pair selection and the
//!   binary feature/flow stores.
//! * [`mafe`]: the two-frame motion/appearance feature extractor and its losses.
//! * [`pseudo`]: pseudo ground truth (contrastive re-identification embeddings and
//!   block-matching optical flow).
//! * [`diffusion`]: per-frame VAE, noise schedule, spatio-temporal denoiser, training
//!   and sampling.
//! * [`metrics`]: PSNR, SSIM, Fréchet distances, inception score and endpoint error.
//!
//! [`nn`] holds the small amount of neural-network machinery shared by all models.

pub mod data;
pub mod diffusion;
pub mod error;
pub mod mafe;
pub mod metrics;
pub mod nn;
pub mod pseudo;

pub use error::{Error, Result};
