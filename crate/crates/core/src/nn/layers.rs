use candle_core::{Module, Result, Tensor, D};

use super::{conv::conv2d, params::ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with std `gain / sqrt(fan_in)`.
    FanIn(f64),
    Zero,
}

impl Init {
    fn std(self, fan_in: usize) -> f64 {
        match self {
            Init::FanIn(gain) => gain / (fan_in as f64).sqrt(),
            Init::Zero => 0.,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    pub fn new(ps: &ParamStore, c_in: usize, c_out: usize, k: usize, stride: usize, init: Init) -> crate::Result<Self> {
        let std = init.std(c_in * k * k);
        Ok(Self {
            weight: ps.normal("weight", (c_out, c_in, k, k), std)?,
            bias: ps.zeros("bias", c_out)?,
            stride,
            pad: k / 2,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0).unwrap_or(0)
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, &self.weight, self.stride, self.pad)?;
        y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(ps: &ParamStore, d_in: usize, d_out: usize, init: Init) -> crate::Result<Self> {
        Ok(Self {
            weight: ps.normal("weight", (d_out, d_in), init.std(d_in))?,
            bias: ps.zeros("bias", d_out)?,
        })
    }
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.broadcast_matmul(&self.weight.t()?)?.broadcast_add(&self.bias)
    }
}

/// Group normalisation over `[N, C, ...]`.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    groups: usize,
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl GroupNorm {
    pub fn new(ps: &ParamStore, channels: usize, groups: usize) -> crate::Result<Self> {
        crate::error::ensure!(channels % groups == 0, "group norm: {channels} channels not divisible by {groups} groups");
        Ok(Self {
            groups,
            gamma: ps.constant("gamma", channels, 1.)?,
            beta: ps.zeros("beta", channels)?,
            eps: 1e-5,
        })
    }
}

impl Module for GroupNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let (n, c) = (dims[0], dims[1]);
        let g = x.reshape((n, self.groups, ()))?;
        let mean = g.mean_keepdim(D::Minus1)?;
        let centred = g.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centred.broadcast_div(&(var + self.eps)?.sqrt()?)?.reshape(dims.as_slice())?;
        let mut affine_shape = vec![1, c];
        affine_shape.extend(std::iter::repeat(1).take(dims.len() - 2));
        normed
            .broadcast_mul(&self.gamma.reshape(affine_shape.as_slice())?)?
            .broadcast_add(&self.beta.reshape(affine_shape.as_slice())?)
    }
}

/// Sinusoidal embedding of scalar positions `[N] -> [N, dim]`.
pub fn sinusoidal_embedding(positions: &[f64], dim: usize, like: &Tensor) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            data.push((p * freq).sin());
        }
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            data.push((p * freq).cos());
        }
        if dim % 2 == 1 {
            data.push(0.);
        }
    }
    Tensor::from_vec(data, (positions.len(), dim), like.device())?.to_dtype(like.dtype())
}
