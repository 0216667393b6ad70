//! End-to-end fitting: basis, posterior, sampling, regime fallback,
//! prediction and cross-validation.

use rayon::prelude::*;

use crate::basis::SubspaceBasis;
use crate::data::{kfold_indices, rmse, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{monomial_vector, Eta, InputFrame};
use crate::interpolate::{InterpolationPosterior, PolyharmonicSpline};
use crate::linalg::{dot, Cholesky, Lu, Matrix};
use crate::posterior::{NoiseModel, PosteriorDensity};
use crate::predict::{band_parts, CredibleBand};
use crate::sampler::{run_mcmc, Regime, RegressionPosterior, SamplerConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec<T> {
    /// Homoscedastic noise of known scale.
    Known(T),
    Unknown,
}

impl<T: Scalar> NoiseSpec<T> {
    fn model(&self, n: usize) -> NoiseModel<T> {
        match *self {
            NoiseSpec::Known(s) => NoiseModel::homoscedastic(s, n),
            NoiseSpec::Unknown => NoiseModel::unknown(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig<T> {
    pub eta: Eta,
    pub noise: NoiseSpec<T>,
    pub sampler: SamplerConfig,
}

/// Noise scale used for data uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSummary<T> {
    Known(T),
    /// Posterior median and 5%/95% quantiles.
    Sampled { median: T, q05: T, q95: T },
    /// Least-squares residual scale of the polynomial fallback.
    Residual(T),
    /// Collapsed onto exact interpolation.
    Zero,
}

impl<T: Scalar> NoiseSummary<T> {
    pub fn value(&self) -> T {
        match *self {
            NoiseSummary::Known(s) | NoiseSummary::Residual(s) => s,
            NoiseSummary::Sampled { median, .. } => median,
            NoiseSummary::Zero => T::zero(),
        }
    }
}

/// Everything needed to predict, per regime.
#[derive(Debug, Clone)]
pub enum Predictor<T> {
    /// Single t-process centred at the posterior mean.
    Normal { basis: SubspaceBasis<T>, h_hat: Vec<T>, sigma_hat: Matrix<T>, sigma_y: T },
    /// Weighted least-squares polynomial in frame coordinates.
    Polynomial { eta: Eta, frame: InputFrame<T>, c: Vec<T>, cov: Matrix<T>, sigma_y: T, dof: Option<usize> },
    /// Interpolation posterior of the data.
    Interpolation(InterpolationPosterior<T>),
}

impl<T: Scalar> Predictor<T> {
    pub fn regime(&self) -> Regime {
        match self {
            Predictor::Normal { .. } => Regime::Normal,
            Predictor::Polynomial { .. } => Regime::NullspacePole,
            Predictor::Interpolation(_) => Regime::InterpolationPole,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Predictor::Normal { basis, .. } => basis.frame().dim(),
            Predictor::Polynomial { frame, .. } => frame.dim(),
            Predictor::Interpolation(p) => p.model().dim(),
        }
    }

    pub fn sigma_y(&self) -> T {
        match self {
            Predictor::Normal { sigma_y, .. } | Predictor::Polynomial { sigma_y, .. } => *sigma_y,
            Predictor::Interpolation(_) => T::zero(),
        }
    }

    pub fn mean(&self, xt: &[T]) -> Result<T> {
        if xt.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: xt.len() });
        }
        match self {
            Predictor::Normal { basis, h_hat, .. } => Ok(dot(&basis.eval_functional(xt)?, h_hat)),
            Predictor::Polynomial { eta, frame, c, .. } => {
                PolyharmonicSpline::polynomial(*eta, frame.clone(), c.clone())?.evaluate(xt)
            }
            Predictor::Interpolation(p) => p.model().evaluate(xt),
        }
    }

    /// Mean spline; for the normal regime, the spline with coefficients
    /// `H* ĥ*`.
    pub fn mean_spline(&self) -> Result<PolyharmonicSpline<T>> {
        match self {
            Predictor::Normal { basis, h_hat, .. } => Ok(basis.spline(h_hat)),
            Predictor::Polynomial { eta, frame, c, .. } => PolyharmonicSpline::polynomial(*eta, frame.clone(), c.clone()),
            Predictor::Interpolation(p) => Ok(p.model().clone()),
        }
    }

    pub fn band(&self, probes: &[Vec<T>], level: f64) -> Result<CredibleBand<T>> {
        if let Some(p) = probes.iter().find(|p| p.len() != self.dim()) {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: p.len() });
        }
        match self {
            Predictor::Normal { basis, h_hat, sigma_hat, sigma_y } => {
                let parts = probes.par_iter().map(|p| band_parts(basis, h_hat, sigma_hat, p)).collect::<Result<Vec<_>>>()?;
                CredibleBand::assemble(probes.to_vec(), parts, *sigma_y, Some(basis.nh()), level)
            }
            Predictor::Polynomial { eta, frame, c, cov, sigma_y, dof } => {
                let indices = crate::geometry::enumerate_multi_indices(frame.dim(), *eta);
                let parts = probes
                    .iter()
                    .map(|p| {
                        let m = monomial_vector(&frame.apply(p), &indices);
                        (dot(&m, c), cov.quad_form(&m).max(T::zero()).sqrt(), T::zero())
                    })
                    .collect();
                CredibleBand::assemble(probes.to_vec(), parts, *sigma_y, *dof, level)
            }
            Predictor::Interpolation(post) => {
                let parts = probes
                    .par_iter()
                    .map(|p| match post.pointwise(p) {
                        Ok(pp) => Ok((pp.mean, T::zero(), pp.sd.unwrap_or(pp.scale))),
                        Err(Error::PolynomialData) => Ok((post.model().evaluate(p)?, T::zero(), T::zero())),
                        Err(e) => Err(e),
                    })
                    .collect::<Result<Vec<_>>>()?;
                CredibleBand::assemble(probes.to_vec(), parts, T::zero(), Some(post.dof()), level)
            }
        }
    }
}

/// Weighted least-squares fit within the polynomial nullspace.
///
/// With a known noise covariance `Σ` the coefficient covariance is
/// `(M Σ⁻¹ Mᵀ)⁻¹`; otherwise the residual scale is estimated from the
/// `N − N₀` leftover degrees of freedom.
pub fn polynomial_fit<T: Scalar>(basis: &SubspaceBasis<T>, y: &[T], noise: &NoiseModel<T>) -> Result<Predictor<T>> {
    let system = basis.system();
    let m = &system.kernels().m;
    let (n0, n) = (m.rows(), m.cols());
    let whitened = |chol: Option<&Cholesky<T>>, v: &[T]| match chol {
        Some(c) => c.solve_lower(v),
        None => v.to_vec(),
    };
    let chol = match noise {
        NoiseModel::Known(sigma) => Some(Cholesky::new(sigma)?),
        NoiseModel::Unknown { .. } => None,
    };
    // rows of A are L⁻¹-whitened monomial columns
    let mut a = Matrix::zeros(n, n0);
    for k in 0..n0 {
        let col = whitened(chol.as_ref(), m.row(k));
        for i in 0..n {
            a[(i, k)] = col[i];
        }
    }
    let b = whitened(chol.as_ref(), y);
    let normal = a.transpose().matmul(&a);
    let lu = Lu::new(&normal)?;
    let c = lu.solve(&a.tr_matvec(&b));
    let inv = lu.inverse();
    let fitted = m.tr_matvec(&c);
    let (cov, sigma_y, dof) = match noise {
        NoiseModel::Known(sigma) => {
            let mean_var = sigma.diagonal().iter().copied().sum::<T>() / T::from_usize_lossy(n);
            (inv, mean_var.sqrt(), None)
        }
        NoiseModel::Unknown { .. } => {
            let resid: T = y.iter().zip(&fitted).map(|(&p, &q)| (p - q) * (p - q)).sum();
            let dof = n - n0;
            let s2 = if dof > 0 { resid / T::from_usize_lossy(dof) } else { T::zero() };
            (inv.scale(s2), s2.sqrt(), (dof > 0).then_some(dof))
        }
    };
    Ok(Predictor::Polynomial { eta: basis.eta(), frame: basis.frame().clone(), c, cov, sigma_y, dof })
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FittedModel<T> {
    pub x: Matrix<T>,
    pub y: Vec<T>,
    pub config: FitConfig<T>,
    pub regime: Regime,
    pub predictor: Predictor<T>,
    pub noise: NoiseSummary<T>,
    pub posterior: RegressionPosterior<T>,
}

impl<T: Scalar> FittedModel<T> {
    pub fn fitted_values(&self) -> Result<Vec<T>> {
        (0..self.x.rows()).map(|i| self.predictor.mean(self.x.row(i))).collect()
    }
}

/// Fits the regression posterior and resolves the regime.
pub fn fit<T: Scalar>(x: &Matrix<T>, y: &[T], config: &FitConfig<T>) -> Result<FittedModel<T>> {
    config.sampler.validate()?;
    if let NoiseSpec::Known(s) = config.noise {
        if !(s > T::zero() && s.is_finite()) {
            return Err(Error::InvalidConfig(format!("known noise scale must be positive, got {s}")));
        }
    }
    let basis = SubspaceBasis::new(x, config.eta)?;
    let noise_model = config.noise.model(x.rows());
    let density = PosteriorDensity::new(basis.clone(), y, noise_model.clone())?;
    let posterior = run_mcmc(&density, &config.sampler)?;
    let sampled = || -> Option<NoiseSummary<T>> {
        Some(NoiseSummary::Sampled {
            median: posterior.sigma_y_median()?,
            q05: posterior.sigma_y_quantile(0.05)?,
            q95: posterior.sigma_y_quantile(0.95)?,
        })
    };
    let (predictor, noise) = match posterior.regime {
        Regime::Normal => {
            let noise = match config.noise {
                NoiseSpec::Known(s) => NoiseSummary::Known(s),
                NoiseSpec::Unknown => sampled().ok_or(Error::TooFewSamples(0))?,
            };
            let p = Predictor::Normal {
                basis,
                h_hat: posterior.h_hat.clone(),
                sigma_hat: posterior.sigma_hat.clone(),
                sigma_y: noise.value(),
            };
            (p, noise)
        }
        Regime::NullspacePole => {
            let p = polynomial_fit(&basis, y, &noise_model)?;
            let noise = match config.noise {
                NoiseSpec::Known(s) => NoiseSummary::Known(s),
                NoiseSpec::Unknown => NoiseSummary::Residual(p.sigma_y()),
            };
            (p, noise)
        }
        Regime::InterpolationPole => {
            let post = InterpolationPosterior::from_system(basis.system().clone(), y)?;
            (Predictor::Interpolation(post), NoiseSummary::Zero)
        }
    };
    Ok(FittedModel { x: x.clone(), y: y.to_vec(), config: *config, regime: posterior.regime, predictor, noise, posterior })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult<T> {
    pub test: Vec<usize>,
    pub predictions: Vec<T>,
    pub rmse: T,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation<T> {
    pub folds: Vec<FoldResult<T>>,
    /// RMSE over all held-out predictions.
    pub pooled_rmse: T,
}

/// `k`-fold cross-validation; fold `f` samples with seed `sampler.seed + f`.
pub fn crossval<T: Scalar>(ds: &Dataset<T>, k: usize, split_seed: u64, config: &FitConfig<T>) -> Result<CrossValidation<T>> {
    let splits = kfold_indices(ds.len(), k, split_seed)?;
    let folds = splits
        .par_iter()
        .enumerate()
        .map(|(f, (train, test))| {
            let tr = ds.subset(train);
            let te = ds.subset(test);
            let mut cfg = *config;
            cfg.sampler.seed = config.sampler.seed.wrapping_add(f as u64);
            let model = fit(&tr.x, &tr.y, &cfg)?;
            let predictions = (0..te.len()).map(|i| model.predictor.mean(te.x.row(i))).collect::<Result<Vec<_>>>()?;
            Ok(FoldResult { rmse: rmse(&predictions, &te.y)?, test: test.clone(), predictions, regime: model.regime })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all_pred = Vec::with_capacity(ds.len());
    let mut all_truth = Vec::with_capacity(ds.len());
    for f in &folds {
        all_pred.extend_from_slice(&f.predictions);
        all_truth.extend(f.test.iter().map(|&i| ds.y[i]));
    }
    Ok(CrossValidation { pooled_rmse: rmse(&all_pred, &all_truth)?, folds })
}
