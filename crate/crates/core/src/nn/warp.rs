//! Backward bilinear warping with border clamping.
//!
//! `out[b, c, y, x] = bilinear(img[b, c], x + u[b, y, x], y + v[b, y, x])`, where the
//! sample position is clamped to the image extent. Gradients flow to both the image
//! and the flow; the clamp has zero derivative outside the image.

use candle_core::{bail, CpuStorage, CustomOp2, Layout, Result, Shape, Tensor, WithDType};

#[derive(Clone, Copy)]
struct Dims {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
}

struct Tap {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    wx: f64,
    wy: f64,
    /// Whether x / y lie strictly inside the clamp range (non-zero derivative).
    free_x: bool,
    free_y: bool,
}

fn tap(h: usize, w: usize, sx: f64, sy: f64) -> Tap {
    let (wmax, hmax) = ((w - 1) as f64, (h - 1) as f64);
    let cx = sx.clamp(0., wmax);
    let cy = sy.clamp(0., hmax);
    let x0 = (cx.floor() as usize).min(w - 1);
    let y0 = (cy.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    Tap {
        i00: y0 * w + x0,
        i01: y0 * w + x1,
        i10: y1 * w + x0,
        i11: y1 * w + x1,
        wx: cx - x0 as f64,
        wy: cy - y0 as f64,
        free_x: sx > 0. && sx < wmax,
        free_y: sy > 0. && sy < hmax,
    }
}

fn dims(img: &Layout, flow: &Layout) -> Result<Dims> {
    let (b, c, h, w) = img.shape().dims4()?;
    let (fb, two, fh, fw) = flow.shape().dims4()?;
    if fb != b || two != 2 || fh != h || fw != w {
        bail!("warp: image {:?} and flow {:?} disagree", img.shape(), flow.shape())
    }
    Ok(Dims { b, c, h, w })
}

fn slice<'a, T: WithDType>(s: &'a CpuStorage, l: &Layout) -> Result<&'a [T]> {
    let data = T::cpu_storage_as_slice(s)?;
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => bail!("warp: operands must be contiguous"),
    }
}

fn for_each_pixel(d: Dims, flow: &[f64], mut f: impl FnMut(usize, usize, &Tap)) {
    let hw = d.h * d.w;
    for b in 0..d.b {
        let u = &flow[(2 * b) * hw..(2 * b + 1) * hw];
        let v = &flow[(2 * b + 1) * hw..(2 * b + 2) * hw];
        for y in 0..d.h {
            for x in 0..d.w {
                let p = y * d.w + x;
                let t = tap(d.h, d.w, x as f64 + u[p], y as f64 + v[p]);
                f(b, p, &t);
            }
        }
    }
}

fn warp_fwd<T: WithDType>(d: Dims, img: &[T], flow: &[T]) -> Vec<T> {
    let flow: Vec<f64> = flow.iter().map(|v| v.to_f64()).collect();
    let hw = d.h * d.w;
    let mut out = vec![T::zero(); d.b * d.c * hw];
    for_each_pixel(d, &flow, |b, p, t| {
        for c in 0..d.c {
            let base = (b * d.c + c) * hw;
            let im = &img[base..base + hw];
            let top = im[t.i00].to_f64() * (1. - t.wx) + im[t.i01].to_f64() * t.wx;
            let bot = im[t.i10].to_f64() * (1. - t.wx) + im[t.i11].to_f64() * t.wx;
            out[base + p] = T::from_f64(top * (1. - t.wy) + bot * t.wy);
        }
    });
    out
}

fn warp_bwd<T: WithDType>(d: Dims, img: &[T], flow: &[T], gout: &[T]) -> (Vec<T>, Vec<T>) {
    let flow: Vec<f64> = flow.iter().map(|v| v.to_f64()).collect();
    let hw = d.h * d.w;
    let mut gimg = vec![0f64; d.b * d.c * hw];
    let mut gflow = vec![0f64; d.b * 2 * hw];
    for_each_pixel(d, &flow, |b, p, t| {
        for c in 0..d.c {
            let base = (b * d.c + c) * hw;
            let g = gout[base + p].to_f64();
            if g == 0. {
                continue;
            }
            let gi = &mut gimg[base..base + hw];
            gi[t.i00] += g * (1. - t.wx) * (1. - t.wy);
            gi[t.i01] += g * t.wx * (1. - t.wy);
            gi[t.i10] += g * (1. - t.wx) * t.wy;
            gi[t.i11] += g * t.wx * t.wy;
            let im = &img[base..base + hw];
            let (a, bb, cc, dd) = (im[t.i00].to_f64(), im[t.i01].to_f64(), im[t.i10].to_f64(), im[t.i11].to_f64());
            if t.free_x {
                gflow[(2 * b) * hw + p] += g * ((1. - t.wy) * (bb - a) + t.wy * (dd - cc));
            }
            if t.free_y {
                gflow[(2 * b + 1) * hw + p] += g * ((1. - t.wx) * (cc - a) + t.wx * (dd - bb));
            }
        }
    });
    (
        gimg.into_iter().map(T::from_f64).collect(),
        gflow.into_iter().map(T::from_f64).collect(),
    )
}

struct WarpOp;
struct WarpImageGrad;
struct WarpFlowGrad;

macro_rules! by_dtype {
    ($s:expr, $body:ident) => {
        match $s {
            CpuStorage::F32(_) => $body!(f32, F32),
            CpuStorage::F64(_) => $body!(f64, F64),
            _ => bail!("warp: only f32 and f64 are supported"),
        }
    };
}

impl CustomOp2 for WarpOp {
    fn name(&self) -> &'static str {
        "warp-bilinear"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let d = dims(l1, l2)?;
        macro_rules! go {
            ($t:ty, $v:ident) => {
                Ok((CpuStorage::$v(warp_fwd::<$t>(d, slice(s1, l1)?, slice(s2, l2)?)), l1.shape().clone()))
            };
        }
        by_dtype!(s1, go)
    }

    fn bwd(&self, img: &Tensor, flow: &Tensor, _res: &Tensor, g: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let g = g.contiguous()?;
        // Both gradients come out of one pass; the pair is packed along dim 1.
        let packed = Tensor::cat(&[img, &g], 1)?;
        let gi = packed.apply_op2_no_bwd(flow, &WarpImageGrad)?;
        let gf = packed.apply_op2_no_bwd(flow, &WarpFlowGrad)?;
        Ok((Some(gi), Some(gf)))
    }
}

fn unpack<T: WithDType>(s: &CpuStorage, l: &Layout, f: &Layout) -> Result<(Dims, Vec<T>, Vec<T>)> {
    let (b, c2, h, w) = l.shape().dims4()?;
    let c = c2 / 2;
    let d = Dims { b, c, h, w };
    let data = slice::<T>(s, l)?;
    let hw = h * w;
    let mut img = Vec::with_capacity(b * c * hw);
    let mut g = Vec::with_capacity(b * c * hw);
    for bi in 0..b {
        img.extend_from_slice(&data[(bi * c2) * hw..(bi * c2 + c) * hw]);
        g.extend_from_slice(&data[(bi * c2 + c) * hw..(bi * c2 + c2) * hw]);
    }
    let (fb, two, fh, fw) = f.shape().dims4()?;
    if fb != b || two != 2 || fh != h || fw != w {
        bail!("warp grad: inconsistent shapes")
    }
    Ok((d, img, g))
}

impl CustomOp2 for WarpImageGrad {
    fn name(&self) -> &'static str {
        "warp-bilinear-image-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        macro_rules! go {
            ($t:ty, $v:ident) => {{
                let (d, img, g) = unpack::<$t>(s1, l1, l2)?;
                let (gi, _) = warp_bwd::<$t>(d, &img, slice(s2, l2)?, &g);
                Ok((CpuStorage::$v(gi), Shape::from((d.b, d.c, d.h, d.w))))
            }};
        }
        by_dtype!(s1, go)
    }
}

impl CustomOp2 for WarpFlowGrad {
    fn name(&self) -> &'static str {
        "warp-bilinear-flow-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        macro_rules! go {
            ($t:ty, $v:ident) => {{
                let (d, img, g) = unpack::<$t>(s1, l1, l2)?;
                let (_, gf) = warp_bwd::<$t>(d, &img, slice(s2, l2)?, &g);
                Ok((CpuStorage::$v(gf), Shape::from((d.b, 2, d.h, d.w))))
            }};
        }
        by_dtype!(s1, go)
    }
}

/// Backward-warps `img` [B, C, H, W] by `flow` [B, 2, H, W] (u then v, in pixels).
pub fn warp(img: &Tensor, flow: &Tensor) -> Result<Tensor> {
    img.contiguous()?.apply_op2(&flow.contiguous()?, WarpOp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    #[test]
    fn zero_flow_is_identity() -> Result<()> {
        let dev = Device::Cpu;
        let img = Tensor::rand(0f32, 1., (2, 3, 5, 7), &dev)?;
        let flow = Tensor::zeros((2, 2, 5, 7), candle_core::DType::F32, &dev)?;
        let out = warp(&img, &flow)?;
        let diff = (out - &img)?.abs()?.max_all()?.to_scalar::<f32>()?;
        assert_eq!(diff, 0.);
        Ok(())
    }

    #[test]
    fn integer_shift_samples_neighbour() -> Result<()> {
        let dev = Device::Cpu;
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let img = Tensor::from_vec(data, (1, 1, 4, 4), &dev)?;
        let mut f = vec![0f64; 32];
        f[..16].iter_mut().for_each(|u| *u = 1.);
        let flow = Tensor::from_vec(f, (1, 2, 4, 4), &dev)?;
        let out = warp(&img, &flow)?.flatten_all()?.to_vec1::<f64>()?;
        // each pixel reads its right neighbour; the last column is clamped
        assert_eq!(&out[..4], &[1., 2., 3., 3.]);
        Ok(())
    }

    #[test]
    fn gradients_match_finite_differences() -> Result<()> {
        let dev = Device::Cpu;
        let img = Var::from_tensor(&Tensor::rand(0f64, 1., (1, 2, 6, 6), &dev)?)?;
        let flow = Var::from_tensor(&(Tensor::rand(-1.3f64, 1.3, (1, 2, 6, 6), &dev)?))?;
        let weights = Tensor::rand(0f64, 1., (1, 2, 6, 6), &dev)?;
        let loss = |i: &Tensor, f: &Tensor| -> Result<f64> {
            warp(i, f)?.mul(&weights)?.sum_all()?.to_scalar::<f64>()
        };
        let grads = warp(&img, &flow)?.mul(&weights)?.sum_all()?.backward()?;
        for var in [&img, &flow] {
            let analytic = grads.get(var).unwrap().flatten_all()?.to_vec1::<f64>()?;
            let base = var.flatten_all()?.to_vec1::<f64>()?;
            let eps = 1e-6;
            for (k, a) in analytic.iter().enumerate() {
                let mut plus = base.clone();
                plus[k] += eps;
                let mut minus = base.clone();
                minus[k] -= eps;
                let p = Tensor::from_vec(plus, var.shape(), &dev)?;
                let m = Tensor::from_vec(minus, var.shape(), &dev)?;
                let (lp, lm) = if std::ptr::eq(var, &img) {
                    (loss(&p, &flow)?, loss(&m, &flow)?)
                } else {
                    (loss(&img, &p)?, loss(&img, &m)?)
                };
                let fd = (lp - lm) / (2. * eps);
                assert!((fd - a).abs() < 1e-5, "element {k}: fd {fd} vs analytic {a}");
            }
        }
        Ok(())
    }
}
