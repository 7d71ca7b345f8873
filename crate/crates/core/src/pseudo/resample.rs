use ndarray::Array2;

use crate::data::FlowField;
use crate::error::ensure;
use crate::nn::resize::interp_matrix;
use crate::Result;

fn resize(a: &Array2<f32>, h: usize, w: usize) -> Array2<f32> {
    let (hi, wi) = a.dim();
    let rh = Array2::from_shape_vec((h, hi), interp_matrix(h, hi)).expect("interp shape");
    let rw = Array2::from_shape_vec((w, wi), interp_matrix(w, wi)).expect("interp shape");
    rh.dot(&a.mapv(f64::from)).dot(&rw.t()).mapv(|v| v as f32)
}

/// Bilinear resize of a flow field with displacements rescaled to the new pixel size.
/// The validity mask, if any, is resampled by nearest neighbour.
pub fn resample_flow(f: &FlowField, h: usize, w: usize) -> Result<FlowField> {
    ensure!(h >= 2 && w >= 2, "resampled flow must be at least 2x2, got {h}x{w}");
    let (hi, wi) = f.dim();
    if (hi, wi) == (h, w) {
        return Ok(f.clone());
    }
    let (sx, sy) = (w as f32 / wi as f32, h as f32 / hi as f32);
    let mut out = FlowField::new(resize(&f.u, h, w) * sx, resize(&f.v, h, w) * sy)?;
    if let Some(m) = &f.valid_mask {
        let near = |i: usize, n_out: usize, n_in: usize| (((i as f64 + 0.5) * n_in as f64 / n_out as f64) as usize).min(n_in - 1);
        out.valid_mask = Some(Array2::from_shape_fn((h, w), |(y, x)| m[(near(y, h, hi), near(x, w, wi))]));
    }
    Ok(out)
}
