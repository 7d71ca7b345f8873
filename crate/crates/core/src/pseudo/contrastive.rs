use candle_core::{Tensor, D};

use crate::error::ensure;
use crate::Result;

/// Rows scaled to unit L2 norm.
pub fn l2_normalize(x: &Tensor) -> candle_core::Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
    x.broadcast_div(&norm)
}

/// InfoNCE over cosine similarities.
///
/// `anchor`, `positive`: `[N, D]`; `negatives`: `[N, M, D]`. Returns the mean over anchors of
/// `-log(exp(s⁺/τ) / (exp(s⁺/τ) + Σ exp(s⁻/τ)))`.
pub fn contrastive_loss(anchor: &Tensor, positive: &Tensor, negatives: &Tensor, tau: f64) -> Result<Tensor> {
    ensure!(tau > 0., "temperature must be positive, got {tau}");
    let (n, d) = anchor.dims2()?;
    ensure!(n > 0, "contrastive loss needs at least one anchor");
    ensure!(positive.dims2()? == (n, d), "positive shape {:?} vs anchor {:?}", positive.shape(), anchor.shape());
    let (nn, m, dn) = negatives.dims3()?;
    ensure!(m > 0, "contrastive loss needs at least one negative per anchor");
    ensure!((nn, dn) == (n, d), "negatives shape {:?} vs anchor {:?}", negatives.shape(), anchor.shape());
    let a = l2_normalize(anchor)?;
    let s_pos = (a.mul(&l2_normalize(positive)?)?.sum_keepdim(1)? / tau)?;
    let s_neg = (l2_normalize(negatives)?.broadcast_mul(&a.unsqueeze(1)?)?.sum(2)? / tau)?;
    let logits = Tensor::cat(&[&s_pos, &s_neg], 1)?;
    let max = logits.max_keepdim(1)?.detach();
    let lse = (logits.broadcast_sub(&max)?.exp()?.sum_keepdim(1)?.log()? + max)?;
    Ok((lse - s_pos)?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t2(v: &[f64], n: usize, d: usize) -> Tensor {
        Tensor::from_slice(v, (n, d), &Device::Cpu).unwrap()
    }

    #[test]
    fn closed_form_single_negative() -> Result<()> {
        let a = t2(&[1., 0.], 1, 2);
        let p = t2(&[2., 0.], 1, 2);
        let n = t2(&[0., 3.], 1, 2).unsqueeze(1)?;
        let l = contrastive_loss(&a, &p, &n, 1.)?.to_scalar::<f64>()?;
        let e = std::f64::consts::E;
        assert!((l - -(e / (e + 1.)).ln()).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);
        Ok(())
    }

    #[test]
    fn equal_similarities_give_log_two() -> Result<()> {
        let a = t2(&[1., 1.], 1, 2);
        let p = t2(&[1., 0.], 1, 2);
        let n = t2(&[0., 1.], 1, 2).unsqueeze(1)?;
        let l = contrastive_loss(&a, &p, &n, 0.3)?.to_scalar::<f64>()?;
        assert!((l - 2f64.ln()).abs() < 1e-12);
        Ok(())
    }

    #[test]
    fn shrinking_temperature_drives_loss_down() -> Result<()> {
        let a = t2(&[1., 0.2], 1, 2);
        let p = t2(&[1., 0.], 1, 2);
        let n = t2(&[0., 1.], 1, 2).unsqueeze(1)?;
        let mut prev = f64::INFINITY;
        for tau in [1., 0.5, 0.2, 0.1, 0.05, 0.01] {
            let l = contrastive_loss(&a, &p, &n, tau)?.to_scalar::<f64>()?;
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-20);
        Ok(())
    }

    #[test]
    fn preconditions() {
        let a = t2(&[1., 0.], 1, 2);
        let empty = Tensor::zeros((1, 0, 2), candle_core::DType::F64, &Device::Cpu).unwrap();
        assert!(contrastive_loss(&a, &a, &empty, 0.07).is_err());
        assert!(contrastive_loss(&a, &a, &a.unsqueeze(1).unwrap(), 0.).is_err());
    }
}
