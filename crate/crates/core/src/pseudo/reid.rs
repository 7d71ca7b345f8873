//! Contrastive re-identification embedder producing per-frame pseudo embeddings.

use candle_core::{DType, Module, Tensor, D};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::contrastive::{contrastive_loss, l2_normalize};
use super::losses::reid_key;
use crate::data::{FeatureRecord, FeatureStore, VideoClip};
use crate::error::ensure;
use crate::nn::{frames_tensor, AdamW, AdamWConfig, Conv2d, Init, Linear, LrSchedule, ParamStore, ScheduleKind};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReidConfig {
    /// Width of the first conv layer; later layers double it.
    pub channels: usize,
    pub embedding_dim: usize,
    pub temperature: f64,
    pub steps: usize,
    /// Videos per contrastive batch.
    pub batch_videos: usize,
    pub lr: f64,
    pub seed: u64,
    /// Frames with `t % holdout_every == holdout_every - 1` are never used for training; 0 disables.
    pub holdout_every: usize,
}

impl Default for ReidConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            embedding_dim: 512,
            temperature: 0.07,
            steps: 300,
            batch_videos: 8,
            lr: 1e-3,
            seed: 0,
            holdout_every: 4,
        }
    }
}

impl ReidConfig {
    pub fn is_held_out(&self, t: usize) -> bool {
        self.holdout_every > 0 && t % self.holdout_every == self.holdout_every - 1
    }
}

/// Small strided conv net, global average pool, linear projection, L2 normalisation.
#[derive(Clone, Debug)]
pub struct ReidEmbedder {
    convs: Vec<Conv2d>,
    proj: Linear,
}

impl ReidEmbedder {
    pub fn new(ps: &ParamStore, cfg: &ReidConfig) -> Result<Self> {
        ensure!(cfg.channels > 0 && cfg.embedding_dim > 0, "ReID widths must be positive");
        let c = cfg.channels;
        let widths = [1, c, 2 * c, 4 * c];
        let convs = (0..3)
            .map(|i| Conv2d::new(&ps.pp(format!("conv.{i}")), widths[i], widths[i + 1], 3, 2, Init::FanIn(2f64.sqrt())))
            .collect::<Result<Vec<_>>>()?;
        let proj = Linear::new(&ps.pp("proj"), 4 * c, cfg.embedding_dim, Init::FanIn(1.))?;
        Ok(Self { convs, proj })
    }

    /// `[N, 1, H, W]` frames to unit-norm `[N, D]` embeddings.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.silu()?;
        }
        let pooled = h.mean(D::Minus1)?.mean(D::Minus1)?;
        Ok(l2_normalize(&self.proj.forward(&pooled)?)?)
    }

    /// Embeddings of every frame of a clip, `[T, D]`.
    pub fn embed_clip(&self, clip: &VideoClip, dtype: DType) -> Result<Tensor> {
        let mut parts = Vec::new();
        let frames: Vec<_> = (0..clip.len()).map(|t| clip.frame_owned(t)).collect();
        for chunk in frames.chunks(32) {
            parts.push(self.embed(&frames_tensor(chunk, dtype)?)?);
        }
        Ok(Tensor::cat(&parts, 0)?)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ReidReport {
    pub losses: Vec<f64>,
    /// Optimiser state after the last step.
    pub optimizer: Option<AdamW>,
}

/// Anchor `i` of a `[K, 2, D]` batch sees frame 1 of its own video as positive and both
/// frames of every other video as negatives.
fn batch_loss(e: &Tensor, tau: f64) -> Result<Tensor> {
    let (k, _, d) = e.dims3()?;
    let mut losses = Vec::new();
    for side in 0..2 {
        let anchor = e.narrow(1, side, 1)?.squeeze(1)?;
        let positive = e.narrow(1, 1 - side, 1)?.squeeze(1)?;
        let mut negs = Vec::with_capacity(k);
        for i in 0..k {
            let idx: Vec<u32> = (0..k).filter(|&j| j != i).map(|j| j as u32).collect();
            let idx = Tensor::new(idx.as_slice(), e.device())?;
            negs.push(e.index_select(&idx, 0)?.reshape((2 * (k - 1), d))?);
        }
        losses.push(contrastive_loss(&anchor, &positive, &Tensor::stack(&negs, 0)?, tau)?);
    }
    Ok(((&losses[0] + &losses[1])? / 2.)?)
}

/// Trains the embedder on same-video frame pairs from `clips`.
pub fn train_reid(model: &ReidEmbedder, params: &ParamStore, clips: &[VideoClip], cfg: &ReidConfig) -> Result<ReidReport> {
    if clips.len() < 2 {
        return Err(Error::Config(format!("ReID training needs at least 2 videos to form negatives, got {}", clips.len())));
    }
    let train_frames: Vec<Vec<usize>> = clips
        .iter()
        .map(|c| (0..c.len()).filter(|&t| !cfg.is_held_out(t)).collect())
        .collect();
    ensure!(train_frames.iter().all(|f| f.len() >= 2), "every video needs at least 2 training frames");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(params.vars(), AdamWConfig::default())?;
    let schedule = LrSchedule { base: cfg.lr, warmup: cfg.steps / 20, total: cfg.steps, kind: ScheduleKind::Cosine };
    let k = cfg.batch_videos.clamp(2, clips.len());
    let mut report = ReidReport::default();
    for step in 0..cfg.steps {
        let mut frames = Vec::with_capacity(2 * k);
        for v in sample(&mut rng, clips.len(), k) {
            let pool = &train_frames[v];
            let a = rng.random_range(0..pool.len());
            let mut b = rng.random_range(0..pool.len() - 1);
            if b >= a {
                b += 1;
            }
            frames.push(clips[v].frame_owned(pool[a]));
            frames.push(clips[v].frame_owned(pool[b]));
        }
        let e = model.embed(&frames_tensor(&frames, params.dtype())?)?;
        let d = e.dim(1)?;
        let loss = batch_loss(&e.reshape((k, 2, d))?, cfg.temperature)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("ReID loss at step {step}")));
        }
        opt.backward_step(&loss, schedule.at(step))?;
        report.losses.push(value);
        if step % 50 == 0 {
            log::debug!("reid step {step} loss {value:.4}");
        }
    }
    report.optimizer = Some(opt);
    Ok(report)
}

/// Embeddings of every frame, keyed `video_id#frame_index`.
pub fn export_embeddings(model: &ReidEmbedder, clips: &[VideoClip], dtype: DType) -> Result<Vec<FeatureRecord>> {
    let mut records = Vec::new();
    for clip in clips {
        let e = model.embed_clip(clip, dtype)?.to_dtype(DType::F32)?.to_vec2::<f32>()?;
        for (t, values) in e.into_iter().enumerate() {
            records.push(FeatureRecord::new(reid_key(&clip.id, t), values));
        }
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Separation {
    pub same_mean: f64,
    pub cross_mean: f64,
    /// Share of (anchor, same-video frame, other-video frame) triples ranked correctly.
    pub fraction: f64,
    pub triples: usize,
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}

/// Same-video vs cross-video cosine similarity over the held-out frames.
pub fn reid_separation(store: &FeatureStore, clips: &[VideoClip], cfg: &ReidConfig) -> Result<Separation> {
    let held: Vec<Vec<&[f32]>> = clips
        .iter()
        .map(|c| (0..c.len()).filter(|&t| cfg.is_held_out(t)).map(|t| store.get(&reid_key(&c.id, t))).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    ensure!(held.len() >= 2 && held.iter().all(|h| h.len() >= 2), "separation needs 2 videos with 2 held-out frames each");
    let (mut same, mut n_same, mut cross, mut n_cross, mut good, mut triples) = (0., 0usize, 0., 0usize, 0usize, 0usize);
    for (i, hi) in held.iter().enumerate() {
        for (a, ea) in hi.iter().enumerate() {
            for (b, eb) in hi.iter().enumerate() {
                if a == b {
                    continue;
                }
                let s = cosine(ea, eb);
                same += s;
                n_same += 1;
                for (j, hj) in held.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    for ec in hj {
                        let c = cosine(ea, ec);
                        cross += c;
                        n_cross += 1;
                        good += (s > c) as usize;
                        triples += 1;
                    }
                }
            }
        }
    }
    Ok(Separation {
        same_mean: same / n_same as f64,
        cross_mean: cross / n_cross as f64,
        fraction: good as f64 / triples as f64,
        triples,
    })
}
