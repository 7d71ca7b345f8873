use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::ensure;
use crate::{Error, Result};

/// Sample mean and unbiased covariance of embedding vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, n: usize) -> Result<Self> {
        ensure!(n >= 2, "Gaussian statistics need n >= 2, got {n}");
        let d = mean.len();
        ensure!(cov.shape() == (d, d), "covariance {:?} does not match mean dim {d}", cov.shape());
        let asym = (&cov - cov.transpose()).abs().max();
        ensure!(asym <= 1e-8 * cov.abs().max().max(1.), "covariance is not symmetric (max deviation {asym})");
        Ok(Self { mean, cov, n })
    }

    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        ensure!(n >= 2, "need at least 2 samples to fit Gaussian statistics, got {n}");
        let d = samples[0].len();
        ensure!(samples.iter().all(|s| s.len() == d), "samples differ in dimension");
        let x = DMatrix::from_fn(n, d, |i, j| samples[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let cov = centred.transpose() * &centred / (n - 1) as f64;
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self { mean, cov, n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn clamped_eigenvalues(m: &DMatrix<f64>, what: &str) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1f64, |a, v| a.max(v.abs()));
    let mut vals = Vec::with_capacity(eig.eigenvalues.len());
    for &v in eig.eigenvalues.iter() {
        if v < -1e-6 * scale {
            return Err(Error::Numerical(format!("{what} has eigenvalue {v}; not positive semi-definite")));
        }
        vals.push(v.max(0.));
    }
    Ok((vals, eig.eigenvectors))
}

/// `‖μp − μq‖² + Tr(Σp + Σq − 2 (Σp Σq)^{1/2})`.
///
/// The trace of the square root is computed as `Σ √λ_i(A Σq A)` with `A = Σp^{1/2}`,
/// which shares its spectrum with `Σp Σq` but is symmetric.
pub fn frechet_distance(p: &GaussianStats, q: &GaussianStats) -> Result<f64> {
    ensure!(p.dim() == q.dim(), "dimension mismatch: {} vs {}", p.dim(), q.dim());
    let (vals, vecs) = clamped_eigenvalues(&p.cov, "first covariance")?;
    let sqrt_diag = DMatrix::from_diagonal(&DVector::from_iterator(vals.len(), vals.iter().map(|v| v.sqrt())));
    let a = &vecs * sqrt_diag * vecs.transpose();
    let m = &a * &q.cov * &a;
    let (mv, _) = clamped_eigenvalues(&m, "covariance product")?;
    clamped_eigenvalues(&q.cov, "second covariance")?;
    let tr_sqrt: f64 = mv.iter().map(|v| v.sqrt()).sum();
    let dmu = (&p.mean - &q.mean).norm_squared();
    let d = dmu + p.cov.trace() + q.cov.trace() - 2. * tr_sqrt;
    Ok(d.max(0.))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: &[f64], diag: &[f64]) -> GaussianStats {
        GaussianStats::new(DVector::from_row_slice(mean), DMatrix::from_diagonal(&DVector::from_row_slice(diag)), 10).unwrap()
    }

    #[test]
    fn one_dimensional_closed_forms() -> Result<()> {
        assert!((frechet_distance(&stats(&[0.], &[1.]), &stats(&[1.], &[1.]))? - 1.).abs() < 1e-12);
        assert!((frechet_distance(&stats(&[0.], &[1.]), &stats(&[0.], &[4.]))? - 1.).abs() < 1e-12);
        assert_eq!(frechet_distance(&stats(&[2.], &[3.]), &stats(&[2.], &[3.]))?, 0.);
        Ok(())
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(frechet_distance(&stats(&[0.], &[1.]), &stats(&[0., 0.], &[1., 1.])).is_err());
        let indefinite = GaussianStats::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1., 0., 0., -1.]), 5).unwrap();
        assert!(matches!(frechet_distance(&indefinite, &stats(&[0., 0.], &[1., 1.])), Err(Error::Numerical(_))));
        assert!(GaussianStats::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1., 0.5, 0., 1.]), 5).is_err());
        assert!(GaussianStats::new(DVector::zeros(1), DMatrix::identity(1, 1), 1).is_err());
    }

    #[test]
    fn fit_matches_hand_computation() -> Result<()> {
        let s = GaussianStats::fit(&[vec![1., 2.], vec![3., 2.], vec![5., 8.]])?;
        assert_eq!(s.mean.as_slice(), &[3., 4.]);
        assert!((s.cov[(0, 0)] - 4.).abs() < 1e-12);
        assert!((s.cov[(1, 1)] - 12.).abs() < 1e-12);
        assert!((s.cov[(0, 1)] - 6.).abs() < 1e-12);
        Ok(())
    }
}
