//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use sipr::basis::SubspaceBasis;
use sipr::linalg::Matrix;
use sipr::posterior::{NoiseModel, PosteriorDensity};
use sipr::sampler::{effective_sample_size, RegressionPosterior};
use sipr::Eta;

pub fn random_sorted(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs
}

/// Natural cubic spline through sorted knots, second derivatives zero at
/// both ends, solved with the Thomas algorithm.
pub struct NaturalCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalCubic {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let k = n - 2;
        let mut sub = vec![0.0; k];
        let mut diag = vec![0.0; k];
        let mut sup = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for r in 0..k {
            let i = r + 1;
            sub[r] = h[i - 1];
            diag[r] = 2.0 * (h[i - 1] + h[i]);
            sup[r] = h[i];
            rhs[r] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
        }
        for r in 1..k {
            let w = sub[r] / diag[r - 1];
            diag[r] -= w * sup[r - 1];
            rhs[r] -= w * rhs[r - 1];
        }
        let mut inner = vec![0.0; k];
        for r in (0..k).rev() {
            let next = if r + 1 < k { inner[r + 1] } else { 0.0 };
            inner[r] = (rhs[r] - sup[r] * next) / diag[r];
        }
        let mut m = vec![0.0; n];
        m[1..n - 1].copy_from_slice(&inner);
        Self { x: x.to_vec(), y: y.to_vec(), m }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.x.windows(2).position(|w| t <= w[1]).unwrap_or(self.x.len() - 2);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let (a, b) = ((x1 - t) / h, (t - x0) / h);
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

pub fn piecewise_linear(x: &[f64], y: &[f64], t: f64) -> f64 {
    let i = x.windows(2).position(|w| t <= w[1]).unwrap_or(x.len() - 2);
    let w = (t - x[i]) / (x[i + 1] - x[i]);
    y[i] * (1.0 - w) + y[i + 1] * w
}

/// Two points at η = 0.5 without the prior: an exact 2-D Gaussian.
pub fn gaussian_density() -> PosteriorDensity<f64> {
    let x = Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
    let basis = SubspaceBasis::new(&x, Eta::new(0.5).unwrap()).unwrap();
    let noise = Matrix::from_vec(2, 2, vec![0.04, 0.02, 0.02, 0.09]).unwrap();
    PosteriorDensity::new(basis, &[0.3, 1.1], NoiseModel::Known(noise)).unwrap().without_prior()
}

/// Worst standardized error of the pooled mean, using per-chain ESS.
pub fn mean_z(post: &RegressionPosterior<f64>, mu: &[f64], cov: &Matrix<f64>) -> f64 {
    (0..mu.len())
        .map(|i| {
            let col = post.samples.column(i);
            let ess: f64 = col.chunks(post.chain_len).map(effective_sample_size).sum();
            ((post.h_hat[i] - mu[i]) / (cov[(i, i)] / ess).sqrt()).abs()
        })
        .fold(0.0, f64::max)
}
