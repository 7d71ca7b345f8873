use candle_core::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

/// Standard normal tensor with the shape and dtype of `like`, drawn from `rng`.
pub fn gaussian_like(like: &Tensor, rng: &mut impl Rng) -> candle_core::Result<Tensor> {
    let n = like.elem_count();
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(v, like.shape(), like.device())?.to_dtype(like.dtype())
}

/// Standard normal tensor of a given shape.
pub fn gaussian(shape: &[usize], dtype: candle_core::DType, rng: &mut impl Rng) -> candle_core::Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(v, shape, &candle_core::Device::Cpu)?.to_dtype(dtype)
}
