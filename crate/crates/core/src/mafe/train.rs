use candle_core::{DType, Tensor};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss_tensor, LossWeights};
use super::model::{Mafe, MiddlePrediction};
use super::pyramid::laplacian_loss;
use crate::data::{FlowField, FramePair};
use crate::error::ensure;
use crate::nn::{frames_tensor, scalar, tensor_to_frame, AdamW, AdamWConfig, LrSchedule, ParamStore, ScheduleKind};
use crate::pseudo::{flow_loss, reid_loss};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MafeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub schedule: ScheduleKind,
    pub weights: LossWeights,
    pub pyramid_levels: usize,
    pub clip_grad_norm: f64,
    /// Randomly exchange the two input frames.
    pub swap_augment: bool,
    pub seed: u64,
}

impl Default for MafeTrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 8,
            lr: 2e-4,
            warmup: 2000,
            schedule: ScheduleKind::Cosine,
            weights: LossWeights::default(),
            pyramid_levels: 3,
            clip_grad_norm: 1.0,
            swap_augment: true,
            seed: 0,
        }
    }
}

/// A frame pair with whatever pseudo supervision is available for it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub pair: FramePair,
    /// Pseudo embeddings of `I0` and `I1`.
    pub reid: Option<[Vec<f32>; 2]>,
    /// Pseudo flow from `I0` to `I1`.
    pub flow: Option<FlowField>,
}

impl TrainingPair {
    pub fn new(pair: FramePair) -> Self {
        Self { pair, reid: None, flow: None }
    }

    /// Frames exchanged; the pseudo flow is negated under the linear-motion assumption.
    pub fn swapped(&self) -> Self {
        Self {
            pair: self.pair.swapped(),
            reid: self.reid.clone().map(|[a, b]| [b, a]),
            flow: self.flow.as_ref().map(|f| f.scaled(-1.)),
        }
    }

    fn key(&self) -> String {
        format!("{}#{}-{}", self.pair.video_id, self.pair.i0_index, self.pair.i1_index)
    }
}

/// Loss components of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub total: f64,
    pub lap: f64,
    pub reid: f64,
    pub flow: f64,
}

fn inputs(batch: &[TrainingPair], dtype: DType) -> Result<(Tensor, Tensor, Tensor)> {
    Ok((
        frames_tensor(batch.iter().map(|p| &p.pair.i0), dtype)?,
        frames_tensor(batch.iter().map(|p| &p.pair.i1), dtype)?,
        frames_tensor(batch.iter().map(|p| &p.pair.gt), dtype)?,
    ))
}

fn reid_targets(batch: &[TrainingPair], dtype: DType) -> Result<Option<Tensor>> {
    if batch.iter().any(|p| p.reid.is_none()) {
        return Ok(None);
    }
    let d = batch[0].reid.as_ref().map_or(0, |r| r[0].len());
    let mut data = Vec::with_capacity(batch.len() * 2 * d);
    for p in batch {
        for e in p.reid.as_ref().expect("checked above") {
            ensure!(e.len() == d, "pseudo embedding dims differ within a batch ({} vs {d})", e.len());
            data.extend_from_slice(e);
        }
    }
    Ok(Some(Tensor::from_vec(data, (batch.len(), 2, d), &candle_core::Device::Cpu)?.to_dtype(dtype)?))
}

/// Differentiable total loss of a batch and its components.
pub fn batch_loss(model: &Mafe, batch: &[TrainingPair], cfg: &MafeTrainConfig, dtype: DType) -> Result<(Tensor, StepLoss)> {
    ensure!(!batch.is_empty(), "empty batch");
    let (i0, i1, gt) = inputs(batch, dtype)?;
    let out = model.forward(&i0, &i1)?;
    let lap = laplacian_loss(&out.prediction.frame, &gt, cfg.pyramid_levels)?;

    let reid = match reid_targets(batch, dtype)? {
        Some(t) => Some(reid_loss(&out.appearance, &t)?),
        None if cfg.weights.lambda1 > 0. => {
            let missing = batch.iter().find(|p| p.reid.is_none()).expect("some pair lacks embeddings");
            return Err(Error::MissingKey(format!("ReID embeddings for pair {}", missing.key())));
        }
        None => None,
    };
    let flow = if batch.iter().all(|p| p.flow.is_some()) {
        let flows: Vec<FlowField> = batch.iter().map(|p| p.flow.clone().expect("checked above")).collect();
        Some(flow_loss(&out.prediction.flow_t0, &out.prediction.flow_t1, &flows)?)
    } else if cfg.weights.lambda2 > 0. {
        let missing = batch.iter().find(|p| p.flow.is_none()).expect("some pair lacks a flow");
        return Err(Error::MissingKey(format!("pseudo flow for pair {}", missing.key())));
    } else {
        None
    };
    let total = total_loss_tensor(&lap, reid.as_ref(), flow.as_ref(), &cfg.weights)?;
    let parts = StepLoss {
        total: scalar(&total)?,
        lap: scalar(&lap)?,
        reid: reid.as_ref().map(scalar).transpose()?.unwrap_or(0.),
        flow: flow.as_ref().map(scalar).transpose()?.unwrap_or(0.),
    };
    for (name, v) in [("l_lap", parts.lap), ("l_reid", parts.reid), ("l_flow", parts.flow)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss term {name}")));
        }
    }
    Ok((total, parts))
}

/// Stateful optimisation loop; one call to [`MafeTrainer::step`] per update.
pub struct MafeTrainer<'a> {
    model: &'a Mafe,
    params: &'a ParamStore,
    opt: AdamW,
    cfg: MafeTrainConfig,
    schedule: LrSchedule,
}

impl<'a> MafeTrainer<'a> {
    pub fn new(model: &'a Mafe, params: &'a ParamStore, cfg: MafeTrainConfig) -> Result<Self> {
        cfg.weights.validate()?;
        ensure!(cfg.batch_size > 0, "batch size must be positive");
        let opt = AdamW::new(
            params.vars(),
            AdamWConfig { clip_grad_norm: Some(cfg.clip_grad_norm), ..Default::default() },
        )?;
        let schedule = LrSchedule { base: cfg.lr, warmup: cfg.warmup, total: cfg.steps, kind: cfg.schedule };
        Ok(Self { model, params, opt, cfg, schedule })
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

    /// Samples a batch (seeded by step index) and applies one update.
    pub fn step(&mut self, data: &[TrainingPair]) -> Result<StepLoss> {
        ensure!(!data.is_empty(), "no training pairs");
        let step = self.opt.step_count();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step as u64 + 1);
        let batch: Vec<TrainingPair> = (0..self.cfg.batch_size)
            .map(|_| {
                let p = &data[rng.random_range(0..data.len())];
                if self.cfg.swap_augment && rng.random::<bool>() {
                    p.swapped()
                } else {
                    p.clone()
                }
            })
            .collect();
        let (loss, parts) = batch_loss(self.model, &batch, &self.cfg, self.params.dtype())?;
        self.opt.backward_step(&loss, self.schedule.at(step))?;
        Ok(parts)
    }
}

/// Runs `cfg.steps` updates and returns the per-step losses.
pub fn train_mafe(model: &Mafe, params: &ParamStore, data: &[TrainingPair], cfg: &MafeTrainConfig) -> Result<Vec<StepLoss>> {
    let mut trainer = MafeTrainer::new(model, params, cfg.clone())?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let l = trainer.step(data)?;
        if step % 100 == 0 {
            log::debug!("mafe step {step} total {:.5} lap {:.5} reid {:.5} flow {:.5}", l.total, l.lap, l.reid, l.flow);
        }
        losses.push(l);
    }
    Ok(losses)
}

/// Mean loss over a fixed set of pairs without augmentation.
pub fn evaluate_loss(model: &Mafe, data: &[TrainingPair], cfg: &MafeTrainConfig, dtype: DType) -> Result<StepLoss> {
    ensure!(!data.is_empty(), "no evaluation pairs");
    let mut acc = StepLoss::default();
    for chunk in data.chunks(cfg.batch_size.max(1)) {
        let (_, l) = batch_loss(model, chunk, cfg, dtype)?;
        let w = chunk.len() as f64;
        acc.total += l.total * w;
        acc.lap += l.lap * w;
        acc.reid += l.reid * w;
        acc.flow += l.flow * w;
    }
    let n = data.len() as f64;
    Ok(StepLoss { total: acc.total / n, lap: acc.lap / n, reid: acc.reid / n, flow: acc.flow / n })
}

/// Predicted middle frame and intermediate flows of one pair.
#[derive(Clone, Debug)]
pub struct PairPrediction {
    pub frame: Array2<f32>,
    pub flow_t0: FlowField,
    pub flow_t1: FlowField,
    pub blend_mask: Array2<f32>,
}

fn unpack(pred: &MiddlePrediction, n: usize) -> Result<Vec<PairPrediction>> {
    (0..n)
        .map(|i| {
            let (flow_t0, flow_t1) = pred.flows(i)?;
            Ok(PairPrediction {
                frame: tensor_to_frame(&pred.frame.get(i)?)?,
                flow_t0,
                flow_t1,
                blend_mask: tensor_to_frame(&pred.blend_mask.get(i)?)?,
            })
        })
        .collect()
}

pub fn predict_pairs(model: &Mafe, pairs: &[FramePair], dtype: DType) -> Result<Vec<PairPrediction>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(16) {
        let i0 = frames_tensor(chunk.iter().map(|p| &p.i0), dtype)?;
        let i1 = frames_tensor(chunk.iter().map(|p| &p.i1), dtype)?;
        let pred = model.forward(&i0, &i1)?.prediction;
        out.extend(unpack(&pred, chunk.len())?);
    }
    Ok(out)
}

/// Motion vectors of consecutive-frame pairs, `[pairs, motion_dim]` rows.
pub fn motion_vectors_for_frames(model: &Mafe, frames: &[Array2<f32>], dtype: DType) -> Result<Vec<Vec<f32>>> {
    ensure!(frames.len() >= 2, "need at least two frames for motion vectors");
    let mut out = Vec::with_capacity(frames.len() - 1);
    let idx: Vec<usize> = (0..frames.len() - 1).collect();
    for chunk in idx.chunks(16) {
        let i0 = frames_tensor(chunk.iter().map(|&t| &frames[t]), dtype)?;
        let i1 = frames_tensor(chunk.iter().map(|&t| &frames[t + 1]), dtype)?;
        out.extend(model.motion_vectors(&i0, &i1)?.to_dtype(DType::F32)?.to_vec2::<f32>()?);
    }
    Ok(out)
}
