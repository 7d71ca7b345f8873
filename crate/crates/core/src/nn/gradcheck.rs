//! Finite-difference gradient checking for scalar functions of one tensor.

use candle_core::{DType, Tensor, Var};

use crate::error::ensure;
use crate::Result;

/// Compares the autograd gradient of `f` at `x` with central differences of step `eps`.
/// Returns `‖g_auto − g_fd‖ / max(‖g_auto‖, ‖g_fd‖)`. `x` is promoted to f64.
pub fn gradient_check(x: &Tensor, eps: f64, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<f64> {
    let x = x.to_dtype(DType::F64)?;
    let var = Var::from_tensor(&x)?;
    let y = f(var.as_tensor())?;
    ensure!(y.elem_count() == 1, "gradient check needs a scalar function");
    let grads = y.backward()?;
    let auto = match grads.get(var.as_tensor()) {
        Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
        None => vec![0.; x.elem_count()],
    };
    let base = x.flatten_all()?.to_vec1::<f64>()?;
    let eval = |v: &[f64]| -> Result<f64> {
        let t = Tensor::from_slice(v, x.shape(), x.device())?;
        Ok(f(&t)?.flatten_all()?.to_vec1::<f64>()?[0])
    };
    let mut fd = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + eps;
        let plus = eval(&probe)?;
        probe[i] = base[i] - eps;
        let minus = eval(&probe)?;
        probe[i] = base[i];
        fd.push((plus - minus) / (2. * eps));
    }
    let diff = auto.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = auto.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nf = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nf);
    Ok(if scale == 0. { 0. } else { diff / scale })
}
