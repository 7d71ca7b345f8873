//! Spatio-temporal U-Net over latent videos `[B, T, C_z, h, w]`.

use candle_core::{Device, Module, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::nn::layers::sinusoidal_embedding;
use crate::nn::{resize_bilinear, Conv2d, GroupNorm, Init, Linear, ParamStore};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    /// Even, at least 2; the first half runs on the way down, the rest on the way up.
    pub residual_blocks: usize,
    pub base_channels: usize,
    pub latent_channels: usize,
    pub temporal_attention: bool,
    /// Motion-vector length.
    pub conditioning_dim: usize,
    pub groups: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { residual_blocks: 4, base_channels: 64, latent_channels: 4, temporal_attention: true, conditioning_dim: 1536, groups: 8 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.residual_blocks >= 2 && self.residual_blocks % 2 == 0,
            "residual_blocks must be even and >= 2, got {}",
            self.residual_blocks
        );
        ensure!(self.base_channels > 0 && self.latent_channels > 0 && self.conditioning_dim > 0, "denoiser widths must be positive");
        ensure!(self.base_channels % self.groups == 0, "base_channels must be divisible by groups");
        Ok(())
    }

    fn embed_dim(&self) -> usize {
        4 * self.base_channels
    }
}

/// Per-dimension standardisation of motion vectors, fitted on the training store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondNorm {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl CondNorm {
    pub fn fit<'a>(vectors: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        let vs: Vec<&[f32]> = vectors.into_iter().collect();
        ensure!(!vs.is_empty(), "cannot fit conditioning statistics on no vectors");
        let d = vs[0].len();
        ensure!(vs.iter().all(|v| v.len() == d), "motion vectors differ in length");
        let n = vs.len() as f64;
        let mean: Vec<f64> = (0..d).map(|i| vs.iter().map(|v| v[i] as f64).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|i| {
                let var = vs.iter().map(|v| (v[i] as f64 - mean[i]).powi(2)).sum::<f64>() / n;
                (var.sqrt() + 1e-6) as f32
            })
            .collect();
        Ok(Self { mean: mean.into_iter().map(|m| m as f32).collect(), std })
    }

    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.; dim], std: vec![1.; dim] }
    }

    fn apply(&self, cond: &Tensor) -> candle_core::Result<Tensor> {
        let d = self.mean.len();
        let m = Tensor::from_slice(&self.mean, (1, d), &Device::Cpu)?.to_dtype(cond.dtype())?;
        let s = Tensor::from_slice(&self.std, (1, d), &Device::Cpu)?.to_dtype(cond.dtype())?;
        cond.broadcast_sub(&m)?.broadcast_div(&s)
    }
}

fn softmax_last(x: &Tensor) -> candle_core::Result<Tensor> {
    let e = x.broadcast_sub(&x.max_keepdim(D::Minus1)?.detach())?.exp()?;
    e.broadcast_div(&e.sum_keepdim(D::Minus1)?)
}

/// Self-attention along the frame axis at every spatial location.
#[derive(Clone, Debug)]
struct TemporalAttention {
    norm: GroupNorm,
    qkv: Linear,
    out: Linear,
    channels: usize,
}

impl TemporalAttention {
    fn new(ps: &ParamStore, c: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            norm: GroupNorm::new(&ps.pp("norm"), c, groups)?,
            qkv: Linear::new(&ps.pp("qkv"), c, 3 * c, Init::FanIn(1.))?,
            out: Linear::new(&ps.pp("out"), c, c, Init::Zero)?,
            channels: c,
        })
    }

    /// `x`: `[B·T, C, h, w]`.
    fn forward(&self, x: &Tensor, frames: usize) -> candle_core::Result<Tensor> {
        let (bt, c, h, w) = x.dims4()?;
        let b = bt / frames;
        let positions: Vec<f64> = (0..frames).map(|t| t as f64).collect();
        let pos = sinusoidal_embedding(&positions, c, x)?.reshape((1, 1, frames, c))?;
        let tokens = self
            .norm
            .forward(x)?
            .reshape((b, frames, c, h * w))?
            .permute((0, 3, 1, 2))?
            .broadcast_add(&pos)?;
        let qkv = self.qkv.forward(&tokens)?;
        let q = qkv.narrow(D::Minus1, 0, c)?.contiguous()?;
        let k = qkv.narrow(D::Minus1, c, c)?.contiguous()?;
        let v = qkv.narrow(D::Minus1, 2 * c, c)?.contiguous()?;
        let att = softmax_last(&(q.matmul(&k.t()?)? / (self.channels as f64).sqrt())?)?;
        let o = self.out.forward(&att.matmul(&v)?)?;
        let o = o.permute((0, 2, 3, 1))?.reshape((bt, c, h, w))?;
        x + o
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    film: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
    temporal: Option<TemporalAttention>,
}

impl ResBlock {
    fn new(ps: &ParamStore, c_in: usize, c_out: usize, emb: usize, cfg: &DenoiserConfig) -> Result<Self> {
        let g = cfg.groups;
        Ok(Self {
            norm1: GroupNorm::new(&ps.pp("norm1"), c_in, g)?,
            conv1: Conv2d::new(&ps.pp("conv1"), c_in, c_out, 3, 1, Init::FanIn(1.))?,
            film: Linear::new(&ps.pp("film"), emb, 2 * c_out, Init::FanIn(1.))?,
            norm2: GroupNorm::new(&ps.pp("norm2"), c_out, g)?,
            conv2: Conv2d::new(&ps.pp("conv2"), c_out, c_out, 3, 1, Init::FanIn(0.5))?,
            skip: (c_in != c_out).then(|| Conv2d::new(&ps.pp("skip"), c_in, c_out, 1, 1, Init::FanIn(1.))).transpose()?,
            temporal: cfg
                .temporal_attention
                .then(|| TemporalAttention::new(&ps.pp("temporal"), c_out, g))
                .transpose()?,
        })
    }

    /// `x`: `[B·T, C, h, w]`; `emb`: `[B·T, E]`.
    fn forward(&self, x: &Tensor, emb: &Tensor, frames: usize) -> candle_core::Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let c = h.dim(1)?;
        let film = self.film.forward(&emb.silu()?)?.unsqueeze(2)?.unsqueeze(3)?;
        let (scale, shift) = (film.narrow(1, 0, c)?, film.narrow(1, c, c)?);
        let h = h.broadcast_mul(&(scale + 1.)?)?.broadcast_add(&shift)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let skip = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        let y = (skip + h)?;
        match &self.temporal {
            Some(t) => t.forward(&y, frames),
            None => Ok(y),
        }
    }
}

/// Noise predictor `ε̂(z_t, t, motion)`.
#[derive(Clone, Debug)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    cond_norm: CondNorm,
    time_mlp: [Linear; 2],
    cond_mlp: [Linear; 2],
    null_embedding: Tensor,
    conv_in: Conv2d,
    down_blocks: Vec<ResBlock>,
    downsample: Conv2d,
    up_blocks: Vec<ResBlock>,
    upsample: Conv2d,
    out_norm: GroupNorm,
    conv_out: Conv2d,
}

impl Denoiser {
    pub fn new(ps: &ParamStore, cfg: DenoiserConfig, cond_norm: CondNorm) -> Result<Self> {
        cfg.validate()?;
        ensure!(
            cond_norm.mean.len() == cfg.conditioning_dim,
            "conditioning statistics have dim {}, config says {}",
            cond_norm.mean.len(),
            cfg.conditioning_dim
        );
        let (c, e, z) = (cfg.base_channels, cfg.embed_dim(), cfg.latent_channels);
        let half = cfg.residual_blocks / 2;
        let mut down_blocks = vec![ResBlock::new(&ps.pp("down.0"), c, c, e, &cfg)?];
        for i in 1..half {
            let c_in = if i == 1 { c } else { 2 * c };
            down_blocks.push(ResBlock::new(&ps.pp(format!("down.{i}")), c_in, 2 * c, e, &cfg)?);
        }
        let mut up_blocks = Vec::new();
        for i in 0..half - 1 {
            up_blocks.push(ResBlock::new(&ps.pp(format!("up.{i}")), 2 * c, 2 * c, e, &cfg)?);
        }
        up_blocks.push(ResBlock::new(&ps.pp(format!("up.{}", half - 1)), 2 * c, c, e, &cfg)?);
        Ok(Self {
            time_mlp: [
                Linear::new(&ps.pp("time.0"), c, e, Init::FanIn(1.))?,
                Linear::new(&ps.pp("time.1"), e, e, Init::FanIn(1.))?,
            ],
            cond_mlp: [
                Linear::new(&ps.pp("cond.0"), cfg.conditioning_dim, e, Init::FanIn(1.))?,
                Linear::new(&ps.pp("cond.1"), e, e, Init::FanIn(1.))?,
            ],
            null_embedding: ps.normal("null_embedding", e, 1.)?,
            conv_in: Conv2d::new(&ps.pp("conv_in"), z, c, 3, 1, Init::FanIn(1.))?,
            downsample: Conv2d::new(&ps.pp("downsample"), c, if half > 1 { c } else { 2 * c }, 3, 2, Init::FanIn(1.))?,
            upsample: Conv2d::new(&ps.pp("upsample"), 2 * c, c, 3, 1, Init::FanIn(1.))?,
            out_norm: GroupNorm::new(&ps.pp("out_norm"), c, cfg.groups)?,
            conv_out: Conv2d::new(&ps.pp("conv_out"), c, z, 3, 1, Init::Zero)?,
            down_blocks,
            up_blocks,
            cond_norm,
            cfg,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn cond_norm(&self) -> &CondNorm {
        &self.cond_norm
    }

    /// Per-sample embeddings `[B, E]`; rows with `null[i]` (or all rows without `cond`) use the null embedding.
    fn embedding(&self, steps: &[usize], cond: Option<&Tensor>, null: Option<&[bool]>, like: &Tensor) -> Result<Tensor> {
        let b = steps.len();
        let positions: Vec<f64> = steps.iter().map(|&t| t as f64).collect();
        let t = sinusoidal_embedding(&positions, self.cfg.base_channels, like)?;
        let t = self.time_mlp[1].forward(&self.time_mlp[0].forward(&t)?.silu()?)?;
        let e = self.cfg.embed_dim();
        let null_row = self.null_embedding.reshape((1, e))?.broadcast_as((b, e))?;
        let c = match cond {
            None => null_row,
            Some(cond) => {
                let (cb, d) = cond.dims2()?;
                ensure!(cb == b, "{cb} conditioning vectors for a batch of {b}");
                ensure!(d == self.cfg.conditioning_dim, "conditioning dim {d}, expected {}", self.cfg.conditioning_dim);
                let x = self.cond_norm.apply(&cond.to_dtype(like.dtype())?)?;
                let m = self.cond_mlp[1].forward(&self.cond_mlp[0].forward(&x)?.silu()?)?;
                match null {
                    Some(mask) => {
                        ensure!(mask.len() == b, "null mask length {} vs batch {b}", mask.len());
                        let keep: Vec<f64> = mask.iter().map(|&n| if n { 0. } else { 1. }).collect();
                        let keep = Tensor::from_vec(keep, (b, 1), like.device())?.to_dtype(like.dtype())?;
                        (m.broadcast_mul(&keep)? + null_row.broadcast_mul(&(1. - keep)?)?)?
                    }
                    None => m,
                }
            }
        };
        Ok((t + c)?)
    }

    /// Predicted noise for `z_t` `[B, T, C_z, h, w]` at steps `t` (one per sample).
    pub fn forward(&self, z_t: &Tensor, steps: &[usize], cond: Option<&Tensor>, null: Option<&[bool]>) -> Result<Tensor> {
        let (b, frames, cz, h, w) = z_t.dims5()?;
        ensure!(cz == self.cfg.latent_channels, "latent channels {cz}, expected {}", self.cfg.latent_channels);
        ensure!(h % 2 == 0 && w % 2 == 0, "latent size {h}x{w} must be even");
        ensure!(steps.len() == b, "{} steps for a batch of {b}", steps.len());
        let emb = self.embedding(steps, cond, null, z_t)?;
        let e = emb.dim(1)?;
        let emb = emb.unsqueeze(1)?.broadcast_as((b, frames, e))?.reshape((b * frames, e))?;

        let x = z_t.reshape((b * frames, cz, h, w))?;
        let x = self.conv_in.forward(&x)?;
        let skip = self.down_blocks[0].forward(&x, &emb, frames)?;
        let mut y = self.downsample.forward(&skip)?;
        for block in &self.down_blocks[1..] {
            y = block.forward(&y, &emb, frames)?;
        }
        let n = self.up_blocks.len();
        for block in &self.up_blocks[..n - 1] {
            y = block.forward(&y, &emb, frames)?;
        }
        let up = self.upsample.forward(&resize_bilinear(&y, h, w)?)?;
        let y = self.up_blocks[n - 1].forward(&Tensor::cat(&[&up, &skip], 1)?, &emb, frames)?;
        let out = self.conv_out.forward(&self.out_norm.forward(&y)?.silu()?)?;
        Ok(out.reshape((b, frames, cz, h, w))?)
    }
}
