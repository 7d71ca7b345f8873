//! Local-window cross-frame attention.

use candle_core::{Device, Tensor};

use super::coords::CoordGrid;
use crate::error::ensure;
use crate::Result;

/// Result of attending from frame `a` into frame `b`.
#[derive(Clone, Debug)]
pub struct Attended {
    /// Expected coordinate offset `Σ w (c_q - c_p)`, `[N, 2, H, W]`.
    pub offset: Tensor,
    /// Attention-weighted neighbour values, `[N, C_v, H, W]`.
    pub values: Tensor,
}

fn shifted_stack(x: &Tensor, r: usize, h: usize, w: usize) -> candle_core::Result<Tensor> {
    let padded = x.pad_with_zeros(2, r, r)?.pad_with_zeros(3, r, r)?;
    let k = 2 * r + 1;
    let mut shifts = Vec::with_capacity(k * k);
    for dy in 0..k {
        for dx in 0..k {
            shifts.push(padded.narrow(2, dy, h)?.narrow(3, dx, w)?);
        }
    }
    Tensor::stack(&shifts, 2)
}

/// Scaled dot-product attention of every location of `query` over the
/// `window × window` neighbourhood of the same location in `key`/`value`.
/// Neighbours outside the map get zero weight.
///
/// `query`, `key`: `[N, C, H, W]`; `value`: `[N, C_v, H, W]`.
pub fn local_attention(query: &Tensor, key: &Tensor, value: &Tensor, grid: &CoordGrid, window: usize) -> Result<Attended> {
    ensure!(window >= 3 && window % 2 == 1, "attention window must be odd and >= 3, got {window}");
    let (n, c, h, w) = query.dims4()?;
    ensure!(key.dims4()? == (n, c, h, w), "key shape {:?} vs query {:?}", key.shape(), query.shape());
    let (nv, _, hv, wv) = value.dims4()?;
    ensure!((nv, hv, wv) == (n, h, w), "value shape {:?} vs query {:?}", value.shape(), query.shape());
    ensure!(
        (grid.height(), grid.width()) == (h, w),
        "coordinate grid {}x{} vs feature map {h}x{w}",
        grid.height(),
        grid.width()
    );
    let r = (window / 2).min(h.max(w) - 1);
    let dtype = query.dtype();

    let keys = shifted_stack(key, r, h, w)?;
    let logits = (query.unsqueeze(2)?.broadcast_mul(&keys)?.sum(1)? / (c as f64).sqrt())?;

    let ones = Tensor::ones((1, 1, h, w), dtype, &Device::Cpu)?;
    let valid = shifted_stack(&ones, r, h, w)?.squeeze(1)?;
    let masked = (logits.broadcast_mul(&valid)? + ((valid.clone() - 1.)? * 1e4)?.broadcast_as(logits.shape())?)?;
    let shifted = masked.broadcast_sub(&masked.max_keepdim(1)?.detach())?;
    let e = shifted.exp()?.broadcast_mul(&valid)?;
    let weights = e.broadcast_div(&e.sum_keepdim(1)?)?;

    let g = grid.to_tensor(dtype)?;
    let rel = shifted_stack(&g, r, h, w)?.broadcast_sub(&g.unsqueeze(2)?)?;
    let wu = weights.unsqueeze(1)?;
    let offset = wu.broadcast_mul(&rel)?.sum(2)?;
    let values = wu.broadcast_mul(&shifted_stack(value, r, h, w)?)?.sum(2)?;
    Ok(Attended { offset, values })
}

/// Cell spacing of a normalized grid along (x, y).
pub fn cell_size(grid: &CoordGrid) -> (f64, f64) {
    (2. / (grid.width() - 1) as f64, 2. / (grid.height() - 1) as f64)
}
