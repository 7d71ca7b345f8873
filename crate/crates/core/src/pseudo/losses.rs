use candle_core::{Device, Tensor, D};
use ndarray::Array2;

use super::contrastive::l2_normalize;
use super::resample::resample_flow;
use crate::data::{FeatureStore, FlowField};
use crate::error::ensure;
use crate::mafe::AppearanceFeatures;
use crate::Result;

/// Store key of the embedding of one frame.
pub fn reid_key(video_id: &str, frame_index: usize) -> String {
    format!("{video_id}#{frame_index}")
}

/// Pseudo embeddings of both frames of a pair.
pub fn pair_embeddings(store: &FeatureStore, video_id: &str, i0: usize, i1: usize) -> Result<[Vec<f32>; 2]> {
    Ok([store.get(&reid_key(video_id, i0))?.to_vec(), store.get(&reid_key(video_id, i1))?.to_vec()])
}

/// MSE between globally pooled, L2-normalised maps `[B, 2, C, H, W]` and pseudo embeddings `[B, 2, C]`.
pub fn reid_loss_from_map(map: &Tensor, pseudo: &Tensor) -> Result<Tensor> {
    let (b, two, c, _, _) = map.dims5()?;
    ensure!(
        pseudo.dims3()? == (b, two, c),
        "pseudo embeddings {:?} do not match pooled features [{b}, {two}, {c}]",
        pseudo.shape()
    );
    let pooled = l2_normalize(&map.mean(D::Minus1)?.mean(D::Minus1)?)?;
    Ok((pooled - pseudo)?.sqr()?.mean_all()?)
}

/// Re-identification loss on the deepest appearance scale.
pub fn reid_loss(app: &AppearanceFeatures, pseudo: &Tensor) -> Result<Tensor> {
    let map = app.scales.last().ok_or_else(|| crate::Error::Precondition("no appearance scales".into()))?;
    reid_loss_from_map(map, pseudo)
}

fn plane(a: &Array2<f32>, scale: f32) -> impl Iterator<Item = f32> + '_ {
    a.iter().map(move |v| v * scale)
}

/// Midpoint targets `(-0.5·P, +0.5·P)` at `h × w` and a validity mask, as `[B, 2, h, w]`, `[B, 2, h, w]`, `[B, 1, h, w]`.
pub fn flow_targets(pseudo: &[FlowField], h: usize, w: usize, like: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let b = pseudo.len();
    let (mut t0, mut t1, mut mask) = (Vec::new(), Vec::new(), Vec::new());
    for f in pseudo {
        ensure!(f.is_finite(), "pseudo flow contains non-finite values");
        let f = resample_flow(f, h, w)?;
        t0.extend(plane(&f.u, -0.5).chain(plane(&f.v, -0.5)));
        t1.extend(plane(&f.u, 0.5).chain(plane(&f.v, 0.5)));
        match &f.valid_mask {
            Some(m) => mask.extend(m.iter().map(|&ok| ok as u8 as f32)),
            None => mask.extend(std::iter::repeat_n(1f32, h * w)),
        }
    }
    let make = |v: Vec<f32>, c: usize| -> candle_core::Result<Tensor> {
        Tensor::from_vec(v, (b, c, h, w), &Device::Cpu)?.to_dtype(like.dtype())
    };
    Ok((make(t0, 2)?, make(t1, 2)?, make(mask, 1)?))
}

/// Masked squared endpoint error of both intermediate flows against the midpoint split
/// of the pseudo flow, averaged over valid pixels and the two flows.
pub fn flow_loss(flow_t0: &Tensor, flow_t1: &Tensor, pseudo: &[FlowField]) -> Result<Tensor> {
    let (b, c, h, w) = flow_t0.dims4()?;
    ensure!(c == 2, "flow tensors need 2 channels, got {c}");
    ensure!(flow_t1.dims4()? == (b, c, h, w), "flow shapes differ: {:?} vs {:?}", flow_t0.shape(), flow_t1.shape());
    ensure!(pseudo.len() == b, "{} pseudo flows for a batch of {b}", pseudo.len());
    let (t0, t1, mask) = flow_targets(pseudo, h, w, flow_t0)?;
    let valid = mask.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    if valid == 0. {
        log::warn!("flow loss: every pixel is masked out, returning 0");
        return Ok((flow_t0.sum_all()? * 0.)?);
    }
    let e0 = (flow_t0 - t0)?.sqr()?.sum_keepdim(1)?;
    let e1 = (flow_t1 - t1)?.sqr()?.sum_keepdim(1)?;
    let total = (e0 + e1)?.broadcast_mul(&mask)?.sum_all()?;
    Ok((total / (2. * valid))?)
}
