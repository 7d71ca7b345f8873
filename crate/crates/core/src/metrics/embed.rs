use candle_core::{DType, Module, Tensor, D};
use ndarray::{ArrayView2, ArrayView3};

use super::frechet::{frechet_distance, GaussianStats};
use crate::data::VideoClip;
use crate::error::ensure;
use crate::nn::{Conv2d, Init, ParamStore};
use crate::{Error, Result};

/// Maps a clip `[L, H, W]` to a fixed-length feature vector.
pub trait ClipEmbedder {
    fn name(&self) -> String;
    fn embed(&self, clip: ArrayView3<f32>) -> Result<Vec<f64>>;
}

/// Frozen spatio-temporal convolutional network with seeded random weights.
///
/// Per-frame strided convolutions, a temporal convolution over neighbouring
/// frames (edge-clamped), and pooling of per-channel means and temporal
/// standard deviations.
pub struct RandomConvEmbedder {
    seed: u64,
    spatial: Conv2d,
    temporal: Conv2d,
    head: Conv2d,
}

impl RandomConvEmbedder {
    pub fn new(seed: u64) -> Result<Self> {
        let ps = ParamStore::new(seed, DType::F32);
        Ok(Self {
            seed,
            spatial: Conv2d::new(&ps.pp("spatial"), 1, 8, 5, 2, Init::FanIn(2f64.sqrt()))?,
            temporal: Conv2d::new(&ps.pp("temporal"), 24, 16, 1, 1, Init::FanIn(2f64.sqrt()))?,
            head: Conv2d::new(&ps.pp("head"), 16, 32, 3, 2, Init::FanIn(2f64.sqrt()))?,
        })
    }

    pub fn dim(&self) -> usize {
        64
    }
}

impl ClipEmbedder for RandomConvEmbedder {
    fn name(&self) -> String {
        format!("random-conv3d(seed={})", self.seed)
    }

    fn embed(&self, clip: ArrayView3<f32>) -> Result<Vec<f64>> {
        let (l, h, w) = clip.dim();
        ensure!(l >= 1 && h >= 8 && w >= 8, "clip {l}x{h}x{w} too small to embed");
        let x = Tensor::from_iter(clip.iter().map(|v| v * 2. - 1.), &candle_core::Device::Cpu)?.reshape((l, 1, h, w))?;
        let a = self.spatial.forward(&x)?.relu()?;
        let prev: Vec<u32> = (0..l).map(|t| t.saturating_sub(1) as u32).collect();
        let next: Vec<u32> = (0..l).map(|t| (t + 1).min(l - 1) as u32).collect();
        let dev = a.device();
        let stacked = Tensor::cat(
            &[
                a.index_select(&Tensor::new(prev.as_slice(), dev)?, 0)?,
                a.clone(),
                a.index_select(&Tensor::new(next.as_slice(), dev)?, 0)?,
            ],
            1,
        )?;
        let b = self.temporal.forward(&stacked)?.relu()?;
        let c = self.head.forward(&b)?.relu()?;
        let per_frame = c.flatten_from(2)?.mean(D::Minus1)?.to_dtype(DType::F64)?;
        let mean = per_frame.mean(0)?;
        let std = per_frame.broadcast_sub(&mean)?.sqr()?.mean(0)?.sqrt()?;
        let out = Tensor::cat(&[mean, std], 0)?.to_vec1::<f64>()?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("clip embedding".into()));
        }
        Ok(out)
    }
}

/// Evenly spaced window start positions.
pub fn window_starts(len: usize, clip_len: usize, windows: usize) -> Vec<usize> {
    if len < clip_len || windows == 0 {
        return Vec::new();
    }
    let span = len - clip_len;
    if windows == 1 {
        return vec![span / 2];
    }
    (0..windows).map(|i| ((i * span) as f64 / (windows - 1) as f64).round() as usize).collect()
}

fn embed_windows(clips: &[VideoClip], embedder: &dyn ClipEmbedder, clip_len: usize, windows: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for clip in clips {
        let starts = window_starts(clip.len(), clip_len, windows);
        if starts.is_empty() {
            log::warn!("clip {} has {} frames, shorter than window {clip_len}; skipped", clip.id, clip.len());
            continue;
        }
        for s in starts {
            out.push(embedder.embed(clip.frames.slice(ndarray::s![s..s + clip_len, .., ..]))?);
        }
    }
    Ok(out)
}

/// Fréchet distance between embedded fixed-length windows of two clip sets.
pub fn fvd(real: &[VideoClip], fake: &[VideoClip], embedder: &dyn ClipEmbedder, clip_len: usize, windows_per_clip: usize) -> Result<f64> {
    ensure!(clip_len >= 1 && windows_per_clip >= 1, "clip_len and windows_per_clip must be positive");
    let r = embed_windows(real, embedder, clip_len, windows_per_clip)?;
    let f = embed_windows(fake, embedder, clip_len, windows_per_clip)?;
    ensure!(
        r.len() >= 2 && f.len() >= 2,
        "fewer than 2 windows of {clip_len} frames per side (real {}, fake {}); all shorter clips were skipped",
        r.len(),
        f.len()
    );
    frechet_distance(&GaussianStats::fit(&r)?, &GaussianStats::fit(&f)?)
}

/// Fréchet distance between embedded single frames.
pub fn fid(real: &[ArrayView2<f32>], fake: &[ArrayView2<f32>], embedder: &dyn ClipEmbedder) -> Result<f64> {
    ensure!(real.len() >= 2 && fake.len() >= 2, "need at least 2 frames per side");
    let embed = |frames: &[ArrayView2<f32>]| -> Result<Vec<Vec<f64>>> {
        frames.iter().map(|f| embedder.embed(f.view().insert_axis(ndarray::Axis(0)))).collect()
    };
    frechet_distance(&GaussianStats::fit(&embed(real)?)?, &GaussianStats::fit(&embed(fake)?)?)
}
