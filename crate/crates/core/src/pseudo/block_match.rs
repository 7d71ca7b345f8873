//! Brute-force block-matching optical flow.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::FlowField;
use crate::error::ensure;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockMatchConfig {
    /// Odd patch side.
    pub patch: usize,
    /// Maximum displacement per axis.
    pub search: usize,
    /// Spacing of matched pixels; others take the nearest match.
    pub stride: usize,
}

impl Default for BlockMatchConfig {
    fn default() -> Self {
        Self { patch: 7, search: 4, stride: 2 }
    }
}

/// Intensities in `[0, 1]` quantised to 16 bits so that SAD sums are exact.
pub fn quantize(frame: ArrayView2<f32>) -> Array2<i64> {
    frame.mapv(|v| (v.clamp(0., 1.) as f64 * 65535.).round() as i64)
}

fn clamped(a: &Array2<i64>, y: isize, x: isize) -> i64 {
    let (h, w) = a.dim();
    a[(y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize)]
}

/// `(|d|², dx, dy)`: ordering used to break SAD ties.
fn tie_key(dx: isize, dy: isize) -> (isize, isize, isize) {
    (dx * dx + dy * dy, dx, dy)
}

fn nearest_grid(i: usize, stride: usize, n: usize) -> usize {
    let last = (n - 1) / stride * stride;
    (((i as f64 / stride as f64).round() as usize) * stride).min(last)
}

/// Integer displacement `d` per pixel minimising `Σ |I0(p + o) - I1(p + o + d)|` over a
/// `patch × patch` neighbourhood `o`, with `|dx|, |dy| ≤ search`. Samples outside the
/// frame repeat the nearest edge pixel. Ties go to the smaller `|d|`, then the smaller
/// `(dx, dy)` lexicographically.
pub fn block_match_flow(i0: ArrayView2<f32>, i1: ArrayView2<f32>, cfg: &BlockMatchConfig) -> Result<FlowField> {
    ensure!(i0.dim() == i1.dim(), "frame shapes differ: {:?} vs {:?}", i0.dim(), i1.dim());
    ensure!(cfg.patch % 2 == 1, "patch must be odd, got {}", cfg.patch);
    ensure!(cfg.search >= 1, "search must be at least 1");
    ensure!(cfg.stride >= 1, "stride must be at least 1");
    let (h, w) = i0.dim();
    ensure!(cfg.patch <= h && cfg.patch <= w, "patch {} larger than frame {h}x{w}", cfg.patch);
    let (q0, q1) = (quantize(i0), quantize(i1));
    let r = (cfg.patch / 2) as isize;
    let s = cfg.search as isize;

    // for each displacement, SAD of every pixel via a summed-area table of |I0 - shift(I1)|
    // over the frame extended by the patch radius
    let (eh, ew) = (h + 2 * r as usize, w + 2 * r as usize);
    let mut best = Array2::from_elem((h, w), (i64::MAX, (0isize, 0isize, 0isize)));
    let mut sat = Array2::<i64>::zeros((eh + 1, ew + 1));
    for dy in -s..=s {
        for dx in -s..=s {
            for ey in 0..eh {
                let mut row = 0;
                for ex in 0..ew {
                    let (y, x) = (ey as isize - r, ex as isize - r);
                    row += (clamped(&q0, y, x) - clamped(&q1, y + dy, x + dx)).abs();
                    sat[(ey + 1, ex + 1)] = sat[(ey, ex + 1)] + row;
                }
            }
            let key = tie_key(dx, dy);
            let p = cfg.patch;
            for y in 0..h {
                for x in 0..w {
                    let sad = sat[(y + p, x + p)] - sat[(y, x + p)] - sat[(y + p, x)] + sat[(y, x)];
                    let cur = &mut best[(y, x)];
                    if sad < cur.0 || (sad == cur.0 && key < cur.1) {
                        *cur = (sad, key);
                    }
                }
            }
        }
    }
    let mut flow = FlowField::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (gy, gx) = (nearest_grid(y, cfg.stride, h), nearest_grid(x, cfg.stride, w));
            let (_, (_, dx, dy)) = best[(gy, gx)];
            flow.u[(y, x)] = dx as f32;
            flow.v[(y, x)] = dy as f32;
        }
    }
    Ok(flow)
}
