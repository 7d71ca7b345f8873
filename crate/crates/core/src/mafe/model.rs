use candle_core::{DType, Module, Tensor, D};
use serde::{Deserialize, Serialize};

use super::attention::local_attention;
use super::coords::coordinate_grid;
use crate::data::FlowField;
use crate::error::ensure;
use crate::nn::{resize_bilinear, warp, Conv2d, Init, ParamStore};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MafeConfig {
    /// Appearance channels per scale.
    pub channels: [usize; 4],
    /// Attention neighbourhood side, in feature cells.
    pub window: usize,
    pub head_channels: usize,
    pub refine_channels: usize,
}

impl Default for MafeConfig {
    fn default() -> Self {
        Self { channels: [64, 128, 256, 512], window: 7, head_channels: 128, refine_channels: 16 }
    }
}

impl MafeConfig {
    /// Length of the exported motion vector.
    pub fn motion_dim(&self) -> usize {
        2 * (self.channels[2] + self.channels[3])
    }

    /// Channel count of the deepest appearance scale (the ReID embedding size).
    pub fn embedding_dim(&self) -> usize {
        self.channels[3]
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.channels.iter().all(|&c| c > 0), "MAFE channels must be positive");
        ensure!(self.window >= 3 && self.window % 2 == 1, "attention window must be odd and >= 3");
        ensure!(self.head_channels > 0 && self.refine_channels > 0, "head widths must be positive");
        Ok(())
    }
}

/// Per-scale maps `[B, 2, C_s, H_s, W_s]`; index 0 along dim 1 is frame `I0`.
#[derive(Clone, Debug)]
pub struct AppearanceFeatures {
    pub scales: Vec<Tensor>,
}

impl AppearanceFeatures {
    /// `[B, C, H, W]` map of one frame at one scale.
    pub fn frame(&self, scale: usize, index: usize) -> candle_core::Result<Tensor> {
        self.scales[scale].narrow(1, index, 1)?.squeeze(1)
    }
}

/// Motion maps for scales 2 and 3, each `[B, 2, C_s, H_s, W_s]`
/// with index 0 = `F0→1` and index 1 = `F1→0`.
#[derive(Clone, Debug)]
pub struct MotionFeatures {
    pub scales: Vec<Tensor>,
}

/// Head outputs at full resolution.
#[derive(Clone, Debug)]
pub struct MiddlePrediction {
    /// `[B, 1, H, W]`, clamped to `[0, 1]`.
    pub frame: Tensor,
    /// `[B, 2, H, W]` pixel displacements sampling `I0`.
    pub flow_t0: Tensor,
    /// `[B, 2, H, W]` pixel displacements sampling `I1`.
    pub flow_t1: Tensor,
    /// `[B, 1, H, W]` in `[0, 1]`.
    pub blend_mask: Tensor,
}

impl MiddlePrediction {
    /// Flow pair of one batch element as plain fields.
    pub fn flows(&self, index: usize) -> Result<(FlowField, FlowField)> {
        let f = |t: &Tensor| -> Result<FlowField> {
            let t = t.get(index)?;
            let u = crate::nn::tensor_to_frame(&t.get(0)?)?;
            let v = crate::nn::tensor_to_frame(&t.get(1)?)?;
            FlowField::new(u, v)
        };
        Ok((f(&self.flow_t0)?, f(&self.flow_t1)?))
    }
}

#[derive(Clone, Debug)]
pub struct MafeOutput {
    pub appearance: AppearanceFeatures,
    pub motion: MotionFeatures,
    pub prediction: MiddlePrediction,
}

/// `clamp(m·warp(I0, f0) + (1−m)·warp(I1, f1) + r, 0, 1)`.
pub fn compose_middle(i0: &Tensor, i1: &Tensor, flow_t0: &Tensor, flow_t1: &Tensor, mask: &Tensor, residual: &Tensor) -> Result<Tensor> {
    let w0 = warp(i0, flow_t0)?;
    let w1 = warp(i1, flow_t1)?;
    let blend = (mask.broadcast_mul(&w0)? + (1. - mask)?.broadcast_mul(&w1)?)?;
    Ok((blend + residual)?.clamp(0., 1.)?)
}

#[derive(Clone, Debug)]
struct ConvBlock {
    a: Conv2d,
    b: Conv2d,
}

impl ConvBlock {
    fn new(ps: &ParamStore, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            a: Conv2d::new(&ps.pp("a"), c_in, c_out, 3, stride, Init::FanIn(2f64.sqrt()))?,
            b: Conv2d::new(&ps.pp("b"), c_out, c_out, 3, 1, Init::FanIn(2f64.sqrt()))?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.b.forward(&self.a.forward(x)?.silu()?)?.silu()
    }
}

#[derive(Clone, Debug)]
struct MotionBranch {
    query: Conv2d,
    key: Conv2d,
    mix: Conv2d,
    out: Conv2d,
}

/// Motion-appearance feature extractor with a middle-frame synthesis head.
#[derive(Clone, Debug)]
pub struct Mafe {
    cfg: MafeConfig,
    blocks: Vec<ConvBlock>,
    motion: Vec<MotionBranch>,
    head: [Conv2d; 3],
    refine: [Conv2d; 2],
}

/// Scales that carry motion features.
pub const MOTION_SCALES: [usize; 2] = [2, 3];

impl Mafe {
    pub fn new(ps: &ParamStore, cfg: MafeConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let strides = [2, 1, 2, 2];
        let mut blocks = Vec::new();
        let mut c_in = 1;
        for (s, (&c_out, &stride)) in c.iter().zip(&strides).enumerate() {
            blocks.push(ConvBlock::new(&ps.pp(format!("encoder.{s}")), c_in, c_out, stride)?);
            c_in = c_out;
        }
        let mut motion = Vec::new();
        for s in MOTION_SCALES {
            let p = ps.pp(format!("motion.{s}"));
            motion.push(MotionBranch {
                query: Conv2d::new(&p.pp("query"), c[s], c[s], 1, 1, Init::FanIn(1.))?,
                key: Conv2d::new(&p.pp("key"), c[s], c[s], 1, 1, Init::FanIn(1.))?,
                mix: Conv2d::new(&p.pp("mix"), c[s] + 2, c[s], 1, 1, Init::FanIn(2f64.sqrt()))?,
                out: Conv2d::new(&p.pp("out"), c[s], c[s], 1, 1, Init::FanIn(1.))?,
            });
        }
        let head_in = 4 * c[2] + 2 * c[3] + 2;
        let hc = cfg.head_channels;
        let head = [
            Conv2d::new(&ps.pp("head.0"), head_in, hc, 3, 1, Init::FanIn(2f64.sqrt()))?,
            Conv2d::new(&ps.pp("head.1"), hc, hc, 3, 1, Init::FanIn(2f64.sqrt()))?,
            Conv2d::new(&ps.pp("head.2"), hc, 6, 3, 1, Init::Zero)?,
        ];
        let rc = cfg.refine_channels;
        let refine = [
            Conv2d::new(&ps.pp("refine.0"), 5, rc, 3, 1, Init::FanIn(2f64.sqrt()))?,
            Conv2d::new(&ps.pp("refine.1"), rc, 1, 3, 1, Init::Zero)?,
        ];
        Ok(Self { cfg, blocks, motion, head, refine })
    }

    pub fn config(&self) -> &MafeConfig {
        &self.cfg
    }

    fn check_frames(i0: &Tensor, i1: &Tensor) -> Result<(usize, usize, usize)> {
        ensure!(i0.shape() == i1.shape(), "frame shapes differ: {:?} vs {:?}", i0.shape(), i1.shape());
        let (b, c, h, w) = i0.dims4()?;
        ensure!(c == 1, "expected single-channel frames, got {c} channels");
        ensure!(h % 8 == 0 && w % 8 == 0 && h >= 16 && w >= 16, "frame size {h}x{w} must be a multiple of 8 and at least 16");
        for t in [i0, i1] {
            let lo = t.min_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let hi = t.max_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            ensure!(lo >= 0. && hi <= 1., "frame values must lie in [0, 1], got [{lo}, {hi}]");
        }
        Ok((b, h, w))
    }

    /// Both frames go through the same encoder in one batch.
    pub fn encode_appearance(&self, i0: &Tensor, i1: &Tensor) -> Result<AppearanceFeatures> {
        let (b, _, _) = Self::check_frames(i0, i1)?;
        let mut x = Tensor::cat(&[i0, i1], 0)?;
        let mut scales = Vec::with_capacity(4);
        for block in &self.blocks {
            x = block.forward(&x)?;
            let (_, c, h, w) = x.dims4()?;
            scales.push(x.reshape((2, b, c, h, w))?.transpose(0, 1)?.contiguous()?);
        }
        Ok(AppearanceFeatures { scales })
    }

    pub fn inter_frame_motion(&self, app: &AppearanceFeatures) -> Result<MotionFeatures> {
        let mut scales = Vec::with_capacity(MOTION_SCALES.len());
        for (branch, &s) in self.motion.iter().zip(&MOTION_SCALES) {
            let (a0, a1) = (app.frame(s, 0)?, app.frame(s, 1)?);
            let (b, c, h, w) = a0.dims4()?;
            let grid = coordinate_grid(h, w)?;
            // both directions in one batch: 0→1 then 1→0
            let a = Tensor::cat(&[&a0, &a1], 0)?;
            let other = Tensor::cat(&[&a1, &a0], 0)?;
            let att = local_attention(&branch.query.forward(&a)?, &branch.key.forward(&other)?, &other, &grid, self.cfg.window)?;
            let feat = Tensor::cat(&[att.offset, (att.values - &a)?], 1)?;
            let m = branch.out.forward(&branch.mix.forward(&feat)?.silu()?)?;
            scales.push(m.reshape((2, b, c, h, w))?.transpose(0, 1)?.contiguous()?);
        }
        Ok(MotionFeatures { scales })
    }

    pub fn synthesize_middle(&self, i0: &Tensor, i1: &Tensor, motion: &MotionFeatures, app: &AppearanceFeatures) -> Result<MiddlePrediction> {
        let (b, h, w) = Self::check_frames(i0, i1)?;
        let flat = |t: &Tensor| -> candle_core::Result<Tensor> {
            let (b, d, c, h, w) = t.dims5()?;
            t.reshape((b, d * c, h, w))
        };
        let (h2, w2) = (app.scales[2].dim(3)?, app.scales[2].dim(4)?);
        let m2 = flat(&motion.scales[0])?;
        let m3 = resize_bilinear(&flat(&motion.scales[1])?, h2, w2)?;
        let a2 = flat(&app.scales[2])?;
        let frames = resize_bilinear(&Tensor::cat(&[i0, i1], 1)?, h2, w2)?;
        let x = Tensor::cat(&[m2, m3, a2, frames], 1)?;
        let x = self.head[0].forward(&x)?.silu()?;
        let x = self.head[1].forward(&x)?.silu()?;
        let out = resize_bilinear(&self.head[2].forward(&x)?, h, w)?;
        let (sx, sy) = (w as f64 / w2 as f64, h as f64 / h2 as f64);
        let scale = Tensor::from_vec(vec![sx, sy], (1, 2, 1, 1), i0.device())?.to_dtype(i0.dtype())?;
        let flow_t0 = out.narrow(1, 0, 2)?.broadcast_mul(&scale)?;
        let flow_t1 = out.narrow(1, 2, 2)?.broadcast_mul(&scale)?;
        let mask = (out.narrow(1, 4, 1)?.neg()?.exp()? + 1.)?.recip()?;
        let coarse_residual = out.narrow(1, 5, 1)?;
        let w0 = warp(i0, &flow_t0)?;
        let w1 = warp(i1, &flow_t1)?;
        let r = self.refine[0].forward(&Tensor::cat(&[i0, i1, &w0, &w1, &mask], 1)?)?.silu()?;
        let residual = (coarse_residual + self.refine[1].forward(&r)?)?;
        let frame = compose_middle(i0, i1, &flow_t0, &flow_t1, &mask, &residual)?;
        debug_assert_eq!(frame.dims4()?, (b, 1, h, w));
        Ok(MiddlePrediction { frame, flow_t0, flow_t1, blend_mask: mask })
    }

    pub fn forward(&self, i0: &Tensor, i1: &Tensor) -> Result<MafeOutput> {
        let appearance = self.encode_appearance(i0, i1)?;
        let motion = self.inter_frame_motion(&appearance)?;
        let prediction = self.synthesize_middle(i0, i1, &motion, &appearance)?;
        Ok(MafeOutput { appearance, motion, prediction })
    }

    /// Motion vectors `[B, motion_dim]` for a batch of frame pairs.
    pub fn motion_vectors(&self, i0: &Tensor, i1: &Tensor) -> Result<Tensor> {
        let app = self.encode_appearance(i0, i1)?;
        extract_motion_vector(&self.inter_frame_motion(&app)?)
    }
}

/// Spatial mean of each motion map, flattened direction-major, scale 2 then scale 3.
pub fn extract_motion_vector(m: &MotionFeatures) -> Result<Tensor> {
    ensure!(m.scales.len() == 2, "motion vector needs two scales, got {}", m.scales.len());
    let parts = m
        .scales
        .iter()
        .map(|t| {
            let b = t.dim(0)?;
            t.mean(D::Minus1)?.mean(D::Minus1)?.reshape((b, ()))
        })
        .collect::<candle_core::Result<Vec<_>>>()?;
    Ok(Tensor::cat(&parts, 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn micro() -> MafeConfig {
        MafeConfig { channels: [4, 8, 8, 16], window: 3, head_channels: 8, refine_channels: 4 }
    }

    fn frames(b: usize, h: usize, w: usize, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..b * h * w).map(|_| rng.random()).collect();
        Tensor::from_vec(v, (b, 1, h, w), &Device::Cpu).unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f32>().unwrap()
    }

    #[test]
    fn default_shapes_at_112() -> Result<()> {
        let ps = ParamStore::new(0, DType::F32);
        let model = Mafe::new(&ps, MafeConfig::default())?;
        let (i0, i1) = (frames(1, 112, 112, 1), frames(1, 112, 112, 2));
        let app = model.encode_appearance(&i0, &i1)?;
        assert_eq!(app.scales[2].dims(), &[1, 2, 256, 28, 28]);
        assert_eq!(app.scales[3].dims(), &[1, 2, 512, 14, 14]);
        let motion = model.inter_frame_motion(&app)?;
        assert_eq!(motion.scales[0].dims(), &[1, 2, 256, 28, 28]);
        assert_eq!(motion.scales[1].dims(), &[1, 2, 512, 14, 14]);
        assert_eq!(extract_motion_vector(&motion)?.dims(), &[1, 1536]);
        assert_eq!(MafeConfig::default().motion_dim(), 1536);
        Ok(())
    }

    #[test]
    fn desk_scale_shapes_and_resolution_covariance() -> Result<()> {
        let ps = ParamStore::new(0, DType::F32);
        let model = Mafe::new(&ps, MafeConfig { window: 7, ..MafeConfig::default() })?;
        let app = model.encode_appearance(&frames(1, 32, 32, 1), &frames(1, 32, 32, 2))?;
        assert_eq!(app.scales[0].dims(), &[1, 2, 64, 16, 16]);
        assert_eq!(app.scales[1].dims(), &[1, 2, 128, 16, 16]);
        assert_eq!(app.scales[2].dims(), &[1, 2, 256, 8, 8]);
        assert_eq!(app.scales[3].dims(), &[1, 2, 512, 4, 4]);

        let small = Mafe::new(&ParamStore::new(0, DType::F32), micro())?;
        let a = small.motion_vectors(&frames(2, 16, 24, 3), &frames(2, 16, 24, 4))?;
        let b = small.motion_vectors(&frames(2, 32, 48, 3), &frames(2, 32, 48, 4))?;
        assert_eq!(a.dims(), &[2, micro().motion_dim()]);
        assert_eq!(a.dims(), b.dims());
        let app = small.encode_appearance(&frames(1, 32, 48, 1), &frames(1, 32, 48, 1))?;
        let app_small = small.encode_appearance(&frames(1, 16, 24, 1), &frames(1, 16, 24, 1))?;
        for (x, y) in app.scales.iter().zip(&app_small.scales) {
            assert_eq!(x.dim(3)?, 2 * y.dim(3)?);
            assert_eq!(x.dim(4)?, 2 * y.dim(4)?);
        }
        Ok(())
    }

    #[test]
    fn identical_frames_share_features() -> Result<()> {
        let model = Mafe::new(&ParamStore::new(1, DType::F32), micro())?;
        let i = frames(2, 16, 16, 5);
        let app = model.encode_appearance(&i, &i)?;
        for s in 0..4 {
            assert_eq!(max_diff(&app.frame(s, 0)?, &app.frame(s, 1)?), 0.);
        }
        Ok(())
    }

    #[test]
    fn swapping_frames_swaps_directions() -> Result<()> {
        let model = Mafe::new(&ParamStore::new(2, DType::F32), micro())?;
        let (i0, i1) = (frames(2, 16, 16, 6), frames(2, 16, 16, 7));
        let m = model.inter_frame_motion(&model.encode_appearance(&i0, &i1)?)?;
        let s = model.inter_frame_motion(&model.encode_appearance(&i1, &i0)?)?;
        for (a, b) in m.scales.iter().zip(&s.scales) {
            assert_eq!(max_diff(&a.narrow(1, 0, 1)?, &b.narrow(1, 1, 1)?), 0.);
            assert_eq!(max_diff(&a.narrow(1, 1, 1)?, &b.narrow(1, 0, 1)?), 0.);
        }
        Ok(())
    }

    #[test]
    fn untrained_head_blends_inputs() -> Result<()> {
        let model = Mafe::new(&ParamStore::new(3, DType::F32), micro())?;
        let (i0, i1) = (frames(2, 16, 16, 8), frames(2, 16, 16, 9));
        let out = model.forward(&i0, &i1)?;
        let avg = ((&i0 + &i1)? / 2.)?;
        assert!(max_diff(&out.prediction.frame, &avg) < 1e-6);
        assert_eq!(out.prediction.flow_t0.abs()?.sum_all()?.to_scalar::<f32>()?, 0.);
        assert!(max_diff(&out.prediction.blend_mask, &Tensor::full(0.5f32, (2, 1, 16, 16), &Device::Cpu)?) < 1e-7);
        Ok(())
    }

    #[test]
    fn oracle_flows_reconstruct_translated_middle() -> Result<()> {
        let (h, w) = (12, 16);
        let base = frames(1, h, w, 10);
        let shift = |d: usize| -> Result<Tensor> {
            // content moved right by d, left border repeated
            let left = base.narrow(3, 0, 1)?.repeat((1, 1, 1, d))?;
            Ok(Tensor::cat(&[&left, &base.narrow(3, 0, w - d)?], 3)?)
        };
        let i1 = shift(2)?;
        let expected = shift(1)?;
        let mut f0 = vec![0f32; 2 * h * w];
        let mut f1 = vec![0f32; 2 * h * w];
        f0[..h * w].fill(-1.);
        f1[..h * w].fill(1.);
        let f0 = Tensor::from_vec(f0, (1, 2, h, w), &Device::Cpu)?;
        let f1 = Tensor::from_vec(f1, (1, 2, h, w), &Device::Cpu)?;
        let m = Tensor::full(0.5f32, (1, 1, h, w), &Device::Cpu)?;
        let r = Tensor::zeros((1, 1, h, w), DType::F32, &Device::Cpu)?;
        let out = compose_middle(&base, &i1, &f0, &f1, &m, &r)?;
        let interior = |t: &Tensor| t.narrow(3, 2, w - 4).unwrap();
        assert!(max_diff(&interior(&out), &interior(&expected)) < 1e-6);
        Ok(())
    }

    #[test]
    fn motion_vector_layout() -> Result<()> {
        let (c2, c3) = (3, 2);
        let vals2: Vec<f32> = (0..2 * c2).map(|i| i as f32).collect();
        let vals3: Vec<f32> = (0..2 * c3).map(|i| 100. + i as f32).collect();
        let fill = |vals: &[f32], c: usize, hw: usize| {
            let data: Vec<f32> = vals.iter().flat_map(|&v| std::iter::repeat_n(v, hw * hw)).collect();
            Tensor::from_vec(data, (1, 2, c, hw, hw), &Device::Cpu).unwrap()
        };
        let m = MotionFeatures { scales: vec![fill(&vals2, c2, 4), fill(&vals3, c3, 2)] };
        let v = extract_motion_vector(&m)?.flatten_all()?.to_vec1::<f32>()?;
        assert_eq!(v, [vals2, vals3].concat());
        let zero = MotionFeatures { scales: vec![fill(&[0.; 6], c2, 4), fill(&[0.; 4], c3, 2)] };
        assert!(extract_motion_vector(&zero)?.flatten_all()?.to_vec1::<f32>()?.iter().all(|&x| x == 0.));
        Ok(())
    }

    #[test]
    fn rejects_bad_frames() {
        let model = Mafe::new(&ParamStore::new(0, DType::F32), micro()).unwrap();
        assert!(model.encode_appearance(&frames(1, 16, 16, 1), &frames(1, 24, 16, 1)).is_err());
        assert!(model.encode_appearance(&frames(1, 12, 12, 1), &frames(1, 12, 12, 1)).is_err());
        let bright = (frames(1, 16, 16, 1) + 1.).unwrap();
        assert!(model.encode_appearance(&bright, &bright).is_err());
    }
}
