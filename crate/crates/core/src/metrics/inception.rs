use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::ensure;
use crate::Result;

fn kl_score(p: ArrayView2<f64>) -> f64 {
    let marginal = p.mean_axis(Axis(0)).expect("non-empty");
    let mut kl = 0f64;
    for row in p.rows() {
        for (q, m) in row.iter().zip(marginal.iter()) {
            if *q > 0. {
                kl += q * (q / m).ln();
            }
        }
    }
    (kl / p.nrows() as f64).exp()
}

/// `exp(E_x KL(p(y|x) ‖ p(y)))` over all rows, with the standard deviation of
/// the same score across `min(10, N)` contiguous folds.
pub fn inception_score(probs: ArrayView2<f64>) -> Result<(f64, f64)> {
    let (n, k) = probs.dim();
    ensure!(n >= 1 && k >= 1, "empty probability matrix");
    for (i, row) in probs.rows().into_iter().enumerate() {
        let s: f64 = row.sum();
        ensure!(row.iter().all(|v| *v >= 0. && v.is_finite()), "row {i} has negative or non-finite entries");
        ensure!((s - 1.).abs() <= 1e-6, "row {i} sums to {s}, not 1");
    }
    let value = kl_score(probs);
    let folds = n.min(10);
    let scores: Vec<f64> = (0..folds).map(|f| kl_score(probs.slice(ndarray::s![f * n / folds..(f + 1) * n / folds, ..]))).collect();
    let mean = scores.iter().sum::<f64>() / folds as f64;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / folds as f64).sqrt();
    Ok((value, std))
}

/// Multinomial logistic regression on standardised features.
#[derive(Clone, Debug)]
pub struct SoftmaxClassifier {
    mean: Array1<f64>,
    std: Array1<f64>,
    weight: Array2<f64>,
    bias: Array1<f64>,
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

impl SoftmaxClassifier {
    /// Full-batch gradient descent on cross-entropy with L2 penalty.
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize, steps: usize, lr: f64, l2: f64) -> Result<Self> {
        let n = features.len();
        ensure!(n >= 2 && n == labels.len(), "need matching features and labels (got {n} and {})", labels.len());
        ensure!(labels.iter().all(|&l| l < classes), "label out of range for {classes} classes");
        let d = features[0].len();
        ensure!(features.iter().all(|f| f.len() == d), "features differ in dimension");
        let x = Array2::from_shape_fn((n, d), |(i, j)| features[i][j]);
        let mean = x.mean_axis(Axis(0)).expect("n >= 2");
        let std = x.std_axis(Axis(0), 0.).mapv(|s| if s > 1e-12 { s } else { 1. });
        let xs = (&x - &mean) / &std;
        let y = Array2::from_shape_fn((n, classes), |(i, c)| if labels[i] == c { 1. } else { 0. });
        let mut weight = Array2::<f64>::zeros((d, classes));
        let mut bias = Array1::<f64>::zeros(classes);
        for _ in 0..steps {
            let p = softmax_rows(xs.dot(&weight) + &bias);
            let g = (p - &y) / n as f64;
            weight = &weight - &((xs.t().dot(&g) + &weight * l2) * lr);
            bias = &bias - &(g.sum_axis(Axis(0)) * lr);
        }
        Ok(Self { mean, std, weight, bias })
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn predict_proba(&self, features: &[Vec<f64>]) -> Result<Array2<f64>> {
        let d = self.mean.len();
        ensure!(features.iter().all(|f| f.len() == d), "feature dim must be {d}");
        let x = Array2::from_shape_fn((features.len(), d), |(i, j)| features[i][j]);
        Ok(softmax_rows(((x - &self.mean) / &self.std).dot(&self.weight) + &self.bias))
    }
}
