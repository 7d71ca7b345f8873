//! Separable bilinear resizing expressed as two matrix products.

use candle_core::{Device, Result, Tensor};

/// Row-interpolation matrix `[n_out, n_in]` for half-pixel-centred bilinear sampling
/// with edge clamping.
pub fn interp_matrix(n_out: usize, n_in: usize) -> Vec<f64> {
    let mut m = vec![0.; n_out * n_in];
    let scale = n_in as f64 / n_out as f64;
    for i in 0..n_out {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0., (n_in - 1) as f64);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let w = src - i0 as f64;
        m[i * n_in + i0] += 1. - w;
        m[i * n_in + i1] += w;
    }
    m
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>, like: &Tensor) -> Result<Tensor> {
    Tensor::from_vec(data, (rows, cols), &Device::Cpu)?.to_dtype(like.dtype())
}

/// Bilinearly resizes the last two dims of a rank-3 or rank-4 tensor.
pub fn resize_bilinear(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let dims = x.dims();
    let (hi, wi) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    if (hi, wi) == (h, w) {
        return Ok(x.clone());
    }
    let lead: usize = dims[..dims.len() - 2].iter().product();
    let rh = matrix(h, hi, interp_matrix(h, hi), x)?;
    let rw = matrix(w, wi, interp_matrix(w, wi), x)?.t()?;
    let flat = x.reshape((lead, hi, wi))?;
    let out = rh.broadcast_matmul(&flat)?.broadcast_matmul(&rw)?;
    let mut shape = dims[..dims.len() - 2].to_vec();
    shape.extend([h, w]);
    out.reshape(shape)
}
