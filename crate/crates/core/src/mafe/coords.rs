use candle_core::{DType, Device, Tensor};
use ndarray::Array3;

use crate::error::ensure;
use crate::Result;

/// `[2, H, W]` grid: channel 0 is x in `[-1, 1]` along width, channel 1 is y along height.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordGrid(pub Array3<f32>);

impl CoordGrid {
    pub fn height(&self) -> usize {
        self.0.dim().1
    }

    pub fn width(&self) -> usize {
        self.0.dim().2
    }

    /// `[1, 2, H, W]` tensor.
    pub fn to_tensor(&self, dtype: DType) -> candle_core::Result<Tensor> {
        let (_, h, w) = self.0.dim();
        Tensor::from_iter(self.0.iter().copied(), &Device::Cpu)?.reshape((1, 2, h, w))?.to_dtype(dtype)
    }
}

fn linspace(n: usize) -> impl Fn(usize) -> f32 {
    move |i| {
        if i + 1 == n {
            1.
        } else {
            (-1. + 2. * i as f64 / (n - 1) as f64) as f32
        }
    }
}

pub fn coordinate_grid(h: usize, w: usize) -> Result<CoordGrid> {
    ensure!(h >= 2 && w >= 2, "coordinate grid needs H, W >= 2, got {h}x{w}");
    let (xs, ys) = (linspace(w), linspace(h));
    Ok(CoordGrid(Array3::from_shape_fn((2, h, w), |(c, y, x)| if c == 0 { xs(x) } else { ys(y) })))
}
