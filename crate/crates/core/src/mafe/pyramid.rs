//! Laplacian pyramid with a 5-tap binomial filter and symmetric padding.
//!
//! Every operator is separable and linear, so each level is computed as
//! `M_h · X · M_wᵀ` with small dense matrices; autograd comes for free.

use candle_core::{Device, Tensor, D};

use crate::error::ensure;
use crate::Result;

pub const BINOMIAL5: [f64; 5] = [1. / 16., 4. / 16., 6. / 16., 4. / 16., 1. / 16.];

/// Symmetric (edge-repeating) reflection of an out-of-range index.
pub fn symmetric_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// `[n, n]` matrix applying the binomial filter along one axis.
fn blur_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.; n * n];
    for i in 0..n {
        for (k, c) in BINOMIAL5.iter().enumerate() {
            let j = symmetric_index(i as isize + k as isize - 2, n);
            m[i * n + j] += c;
        }
    }
    m
}

/// `[n/2, n]`: blur then keep even samples.
fn down_matrix(n: usize) -> Vec<f64> {
    let b = blur_matrix(n);
    let mut m = vec![0.; (n / 2) * n];
    for i in 0..n / 2 {
        m[i * n..(i + 1) * n].copy_from_slice(&b[2 * i * n..(2 * i + 1) * n]);
    }
    m
}

/// `[n, n/2]`: zero insertion then `2 * blur`. Samples beyond the border are taken from
/// the coarse signal reflected symmetrically, so constants are reproduced exactly.
fn up_matrix(n: usize) -> Vec<f64> {
    let half = n / 2;
    let mut m = vec![0.; n * half];
    for i in 0..n {
        for (k, c) in BINOMIAL5.iter().enumerate() {
            let p = i as isize + k as isize - 2;
            if p.rem_euclid(2) == 0 {
                let j = symmetric_index(p.div_euclid(2), half);
                m[i * half + j] += 2. * c;
            }
        }
    }
    m
}

fn apply(x: &Tensor, rows: (usize, usize, Vec<f64>), cols: (usize, usize, Vec<f64>)) -> candle_core::Result<Tensor> {
    let mh = Tensor::from_vec(rows.2, (rows.0, rows.1), &Device::Cpu)?.to_dtype(x.dtype())?;
    let mw = Tensor::from_vec(cols.2, (cols.0, cols.1), &Device::Cpu)?.to_dtype(x.dtype())?.t()?;
    mh.broadcast_matmul(x)?.broadcast_matmul(&mw)
}

fn check_levels(h: usize, w: usize, levels: usize) -> Result<()> {
    ensure!(levels >= 1, "pyramid needs at least one level");
    let f = 1usize << levels;
    ensure!(
        h % f == 0 && w % f == 0 && h / f >= 2 && w / f >= 2,
        "{h}x{w} image too small or not divisible for a {levels}-level pyramid"
    );
    Ok(())
}

/// Blur-and-decimate of the trailing two dims.
pub fn pyr_down(x: &Tensor) -> candle_core::Result<Tensor> {
    let (h, w) = (x.dim(D::Minus2)?, x.dim(D::Minus1)?);
    apply(x, (h / 2, h, down_matrix(h)), (w / 2, w, down_matrix(w)))
}

/// Zero-insertion upsampling followed by `2ψ` along each axis.
pub fn pyr_up(x: &Tensor) -> candle_core::Result<Tensor> {
    let (h, w) = (x.dim(D::Minus2)?, x.dim(D::Minus1)?);
    apply(x, (2 * h, h, up_matrix(2 * h)), (2 * w, w, up_matrix(2 * w)))
}

/// `levels` detail maps followed by the coarse residual.
pub fn laplacian_pyramid(img: &Tensor, levels: usize) -> Result<Vec<Tensor>> {
    let (h, w) = (img.dim(D::Minus2)?, img.dim(D::Minus1)?);
    check_levels(h, w, levels)?;
    let mut out = Vec::with_capacity(levels + 1);
    let mut g = img.clone();
    for _ in 0..levels {
        let next = pyr_down(&g)?;
        out.push((&g - pyr_up(&next)?)?);
        g = next;
    }
    out.push(g);
    Ok(out)
}

pub fn reconstruct(pyramid: &[Tensor]) -> Result<Tensor> {
    let (coarse, details) = pyramid.split_last().ok_or_else(|| crate::Error::Precondition("empty pyramid".into()))?;
    let mut g = coarse.clone();
    for d in details.iter().rev() {
        g = (d + pyr_up(&g)?)?;
    }
    Ok(g)
}

/// Sum over pyramid levels of the mean absolute difference at that level.
pub fn laplacian_loss(pred: &Tensor, target: &Tensor, levels: usize) -> Result<Tensor> {
    ensure!(pred.shape() == target.shape(), "laplacian loss: {:?} vs {:?}", pred.shape(), target.shape());
    // the pyramid is linear, so P(a) - P(b) = P(a - b)
    let diff = (pred - target)?;
    let mut total: Option<Tensor> = None;
    for level in laplacian_pyramid(&diff, levels)? {
        let l = level.abs()?.mean_all()?;
        total = Some(match total {
            Some(t) => (t + l)?,
            None => l,
        });
    }
    Ok(total.expect("at least two levels"))
}
