use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::Result;

fn mse(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Result<f64> {
    ensure!(a.dim() == b.dim(), "shape mismatch: {:?} vs {:?}", a.dim(), b.dim());
    ensure!(!a.is_empty(), "empty frames");
    let mut s = 0f64;
    Zip::from(&a).and(&b).for_each(|x, y| s += (*x as f64 - *y as f64).powi(2));
    Ok(s / a.len() as f64)
}

/// `10·log10(max² / MSE)`; identical inputs give `+∞`.
pub fn psnr(a: ArrayView2<f32>, b: ArrayView2<f32>, max_val: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0. {
        return Ok(f64::INFINITY);
    }
    Ok(10. * (max_val * max_val / m).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    /// Odd window side.
    pub window: usize,
    pub sigma: f64,
    pub max_val: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, max_val: 1. }
    }
}

/// Normalised 1D Gaussian taps.
pub fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window / 2) as f64;
    let raw: Vec<f64> = (0..window).map(|i| (-((i as f64 - c).powi(2)) / (2. * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with the given taps.
fn filter_valid(a: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = a.dim();
    let n = k.len();
    let rows = Array2::from_shape_fn((h, w - n + 1), |(y, x)| (0..n).map(|i| k[i] * a[(y, x + i)]).sum::<f64>());
    Array2::from_shape_fn((h - n + 1, w - n + 1), |(y, x)| (0..n).map(|i| k[i] * rows[(y + i, x)]).sum::<f64>())
}

/// Mean SSIM over all fully contained Gaussian windows.
pub fn ssim(a: ArrayView2<f32>, b: ArrayView2<f32>, cfg: &SsimConfig) -> Result<f64> {
    ensure!(a.dim() == b.dim(), "shape mismatch: {:?} vs {:?}", a.dim(), b.dim());
    ensure!(cfg.window % 2 == 1, "SSIM window must be odd, got {}", cfg.window);
    let (h, w) = a.dim();
    ensure!(h >= cfg.window && w >= cfg.window, "frame {h}x{w} smaller than the {} window", cfg.window);
    let k = gaussian_taps(cfg.window, cfg.sigma);
    let x = a.mapv(f64::from);
    let y = b.mapv(f64::from);
    let mx = filter_valid(&x, &k);
    let my = filter_valid(&y, &k);
    let sxx = filter_valid(&(&x * &x), &k) - &mx * &mx;
    let syy = filter_valid(&(&y * &y), &k) - &my * &my;
    let sxy = filter_valid(&(&x * &y), &k) - &mx * &my;
    let c1 = (0.01 * cfg.max_val).powi(2);
    let c2 = (0.03 * cfg.max_val).powi(2);
    let num = (2. * &mx * &my + c1) * (2. * &sxy + c2);
    let den = (&mx * &mx + &my * &my + c1) * (sxx + syy + c2);
    Ok((num / den).mean().expect("non-empty map"))
}
