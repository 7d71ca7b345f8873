//! 2-D convolution as an im2col/gemm custom op.
//!
//! candle's CPU convolution routes the input gradient through a direct transposed
//! convolution that is several times slower than the forward pass. This op keeps
//! forward and both gradients on gemm, which makes small-model CPU training usable.

use candle_core::{bail, CpuStorage, CustomOp2, Layout, Result, Shape, Tensor, WithDType};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn from_layouts(x: &Layout, w: &Layout, stride: usize, pad: usize) -> Result<Self> {
        let (batch, c_in, h, wd) = x.shape().dims4()?;
        let (c_out, c_in2, k, k2) = w.shape().dims4()?;
        if c_in != c_in2 || k != k2 {
            bail!("conv2d: input {:?} incompatible with kernel {:?}", x.shape(), w.shape())
        }
        if h + 2 * pad < k || wd + 2 * pad < k {
            bail!("conv2d: kernel {k} larger than padded input {h}x{wd}")
        }
        Ok(Self { batch, c_in, h, w: wd, c_out, k, stride, pad })
    }

    fn ho(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    fn wo(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.batch * self.ho() * self.wo()
    }

    /// Calls `f(row, col_index, input_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo, n) = (self.ho(), self.wo(), self.positions());
        for c in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    for b in 0..self.batch {
                        let plane = (b * self.c_in + c) * self.h * self.w;
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let col_base = row * n + (b * ho + oy) * wo;
                            let in_base = plane + iy as usize * self.w;
                            for ox in 0..wo {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < self.w as isize {
                                    f(row, col_base + ox, in_base + ix as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: WithDType>(&self, x: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.patch_len() * self.positions()];
        self.for_each_tap(|_, ci, xi| cols[ci] = x[xi]);
        cols
    }

    fn col2im<T: WithDType>(&self, cols: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.batch * self.c_in * self.h * self.w];
        self.for_each_tap(|_, ci, xi| x[xi] += cols[ci]);
        x
    }

    /// [B, rows, HoWo] -> [rows, B*HoWo]
    fn to_rows<T: WithDType>(&self, rows: usize, y: &[T]) -> Vec<T> {
        let hw = self.ho() * self.wo();
        let n = self.positions();
        let mut out = vec![T::zero(); rows * n];
        for r in 0..rows {
            for b in 0..self.batch {
                out[r * n + b * hw..r * n + (b + 1) * hw]
                    .copy_from_slice(&y[(b * rows + r) * hw..(b * rows + r + 1) * hw]);
            }
        }
        out
    }

    /// [rows, B*HoWo] -> [B, rows, HoWo]
    fn from_rows<T: WithDType>(&self, rows: usize, y: &[T]) -> Vec<T> {
        let hw = self.ho() * self.wo();
        let n = self.positions();
        let mut out = vec![T::zero(); self.batch * rows * hw];
        for r in 0..rows {
            for b in 0..self.batch {
                out[(b * rows + r) * hw..(b * rows + r + 1) * hw]
                    .copy_from_slice(&y[r * n + b * hw..r * n + (b + 1) * hw]);
            }
        }
        out
    }
}

/// `c[m, n] = a[m, k] * b[k, n]`, with either operand optionally transposed.
#[allow(clippy::too_many_arguments)]
fn gemm<T: WithDType>(m: usize, n: usize, k: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (a_rs, a_cs) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (b_rs, b_cs) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe row-major buffers of those sizes.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            n as isize,
            false,
            a.as_ptr(),
            a_cs,
            a_rs,
            b.as_ptr(),
            b_cs,
            b_rs,
            T::zero(),
            T::one(),
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

fn contiguous<'a, T: WithDType>(s: &'a CpuStorage, l: &Layout) -> Result<&'a [T]> {
    let data = T::cpu_storage_as_slice(s)?;
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => bail!("conv2d: operands must be contiguous"),
    }
}

fn forward<T: WithDType>(g: Geom, x: &[T], w: &[T]) -> (Vec<T>, Shape) {
    let cols = g.im2col(x);
    let mut y = vec![T::zero(); g.c_out * g.positions()];
    gemm(g.c_out, g.positions(), g.patch_len(), w, false, &cols, false, &mut y);
    (g.from_rows(g.c_out, &y), Shape::from((g.batch, g.c_out, g.ho(), g.wo())))
}

fn input_grad<T: WithDType>(g: Geom, gy: &[T], w: &[T]) -> (Vec<T>, Shape) {
    let gy = g.to_rows(g.c_out, gy);
    let mut dcols = vec![T::zero(); g.patch_len() * g.positions()];
    gemm(g.patch_len(), g.positions(), g.c_out, w, true, &gy, false, &mut dcols);
    (g.col2im(&dcols), Shape::from((g.batch, g.c_in, g.h, g.w)))
}

fn weight_grad<T: WithDType>(g: Geom, x: &[T], gy: &[T]) -> (Vec<T>, Shape) {
    let cols = g.im2col(x);
    let gy = g.to_rows(g.c_out, gy);
    let mut dw = vec![T::zero(); g.c_out * g.patch_len()];
    gemm(g.c_out, g.patch_len(), g.positions(), &gy, false, &cols, true, &mut dw);
    (dw, Shape::from((g.c_out, g.c_in, g.k, g.k)))
}

macro_rules! by_dtype {
    ($f:ident, $g:expr, $s1:expr, $l1:expr, $s2:expr, $l2:expr) => {
        match $s1 {
            CpuStorage::F32(_) => {
                let (v, sh) = $f::<f32>($g, contiguous($s1, $l1)?, contiguous($s2, $l2)?);
                Ok((CpuStorage::F32(v), sh))
            }
            CpuStorage::F64(_) => {
                let (v, sh) = $f::<f64>($g, contiguous($s1, $l1)?, contiguous($s2, $l2)?);
                Ok((CpuStorage::F64(v), sh))
            }
            _ => bail!("conv2d: only f32 and f64 are supported"),
        }
    };
}

struct Conv2dOp {
    stride: usize,
    pad: usize,
}

struct InputGradOp(Geom);
struct WeightGradOp(Geom);

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d-gemm"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = Geom::from_layouts(l1, l2, self.stride, self.pad)?;
        by_dtype!(forward, g, s1, l1, s2, l2)
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, gy: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let g = Geom::from_layouts(x.layout(), w.layout(), self.stride, self.pad)?;
        let gy = gy.contiguous()?;
        let dx = gy.apply_op2_no_bwd(w, &InputGradOp(g))?;
        let dw = x.apply_op2_no_bwd(&gy, &WeightGradOp(g))?;
        Ok((Some(dx), Some(dw)))
    }
}

impl CustomOp2 for InputGradOp {
    fn name(&self) -> &'static str {
        "conv2d-gemm-input-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        by_dtype!(input_grad, self.0, s1, l1, s2, l2)
    }
}

impl CustomOp2 for WeightGradOp {
    fn name(&self) -> &'static str {
        "conv2d-gemm-weight-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        by_dtype!(weight_grad, self.0, s1, l1, s2, l2)
    }
}

/// Zero-padded 2-D cross-correlation of `x` [B, Ci, H, W] with `w` [Co, Ci, K, K].
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    if stride == 0 {
        bail!("conv2d: stride must be positive")
    }
    x.contiguous()?.apply_op2(&w.contiguous()?, Conv2dOp { stride, pad })
}
