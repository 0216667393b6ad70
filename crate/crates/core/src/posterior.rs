//! Log posterior over subspace coordinates `h* = [h; c]`.
//!
//! The prior is `‖h‖^{−N_h}` on the orthonormal block and flat on the
//! polynomial block; the likelihood is Gaussian. With unknown noise the
//! state gains a trailing `log σ_y` entry and the scale prior `1/σ_y`
//! becomes flat.

use crate::basis::SubspaceBasis;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Cholesky, Matrix};
use crate::scalar::Scalar;

/// MAP iterates smaller than this fraction of `‖h_μ‖` count as collapsed.
pub const POLE_COLLAPSE_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel<T> {
    /// Known noise covariance `Σ_y`.
    Known(Matrix<T>),
    /// Homoscedastic noise with unknown `σ_y`. `initial` defaults to
    /// `√Var(y) / 10`.
    Unknown { initial: Option<T> },
}

impl<T: Scalar> NoiseModel<T> {
    /// `σ² I` for `n` observations.
    pub fn homoscedastic(sigma: T, n: usize) -> Self {
        NoiseModel::Known(Matrix::identity(n).scale(sigma * sigma))
    }

    pub fn unknown() -> Self {
        NoiseModel::Unknown { initial: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode<T> {
    Known,
    Unknown { initial: T },
}

/// Posterior density descriptor. Immutable once built.
#[derive(Debug, Clone)]
pub struct PosteriorDensity<T> {
    basis: SubspaceBasis<T>,
    y: Vec<T>,
    h_mu: Vec<T>,
    /// `E*ᵀ Σ_y⁻¹ E*` when the noise is known, `E*ᵀ E*` otherwise.
    precision: Matrix<T>,
    mode: Mode<T>,
    include_prior: bool,
}

impl<T: Scalar> PosteriorDensity<T> {
    pub fn new(basis: SubspaceBasis<T>, y: &[T], noise: NoiseModel<T>) -> Result<Self> {
        let n = basis.n();
        let (h_mu, precision, mode) = match noise {
            NoiseModel::Known(sigma) => {
                let (h_mu, prec) = basis.to_subspace(y, &sigma)?;
                (h_mu, prec, Mode::Known)
            }
            NoiseModel::Unknown { initial } => {
                let (h_mu, prec) = basis.to_subspace(y, &Matrix::identity(n))?;
                let initial = match initial {
                    Some(s) if s > T::zero() && s.is_finite() => s,
                    Some(s) => return Err(Error::InvalidConfig(format!("initial noise scale must be positive, got {s}"))),
                    None => default_noise_init(y),
                };
                (h_mu, prec, Mode::Unknown { initial })
            }
        };
        Ok(Self { basis, y: y.to_vec(), h_mu, precision, mode, include_prior: true })
    }

    /// Drops the scale-invariant prior, leaving the Gaussian likelihood.
    pub fn without_prior(mut self) -> Self {
        self.include_prior = false;
        self
    }

    pub fn basis(&self) -> &SubspaceBasis<T> {
        &self.basis
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn h_mu(&self) -> &[T] {
        &self.h_mu
    }

    pub fn precision(&self) -> &Matrix<T> {
        &self.precision
    }

    pub fn nh(&self) -> usize {
        self.basis.nh()
    }

    pub fn n0(&self) -> usize {
        self.basis.n0()
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn includes_prior(&self) -> bool {
        self.include_prior
    }

    pub fn is_unknown_noise(&self) -> bool {
        matches!(self.mode, Mode::Unknown { .. })
    }

    /// Starting noise scale in unknown-noise mode.
    pub fn initial_noise(&self) -> Option<T> {
        match self.mode {
            Mode::Unknown { initial } => Some(initial),
            Mode::Known => None,
        }
    }

    /// Length of a state vector: `N`, plus one for `log σ_y`.
    pub fn state_dim(&self) -> usize {
        self.n() + usize::from(self.is_unknown_noise())
    }

    /// `‖h_μ‖` over the orthonormal block.
    pub fn h_mu_norm(&self) -> T {
        norm2(&self.h_mu[..self.nh()])
    }

    fn check_state(&self, state: &[T]) -> Result<()> {
        if state.len() != self.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.state_dim(), got: state.len() });
        }
        Ok(())
    }

    fn prior_norm_sq(&self, h: &[T]) -> Result<T> {
        let r2: T = h[..self.nh()].iter().map(|&v| v * v).sum();
        if self.include_prior && !(r2 > T::zero()) {
            return Err(Error::DomainError("|h| = 0 lies on the prior pole".into()));
        }
        Ok(r2)
    }

    fn prior_value(&self, r2: T) -> T {
        if self.include_prior {
            -T::from_usize_lossy(self.nh()) * T::lit(0.5) * r2.ln()
        } else {
            T::zero()
        }
    }

    /// Adds the prior gradient `−N_h h / ‖h‖²` to `grad`.
    fn add_prior_grad(&self, h: &[T], r2: T, grad: &mut [T]) {
        if !self.include_prior {
            return;
        }
        let k = T::from_usize_lossy(self.nh()) / r2;
        for i in 0..self.nh() {
            grad[i] -= k * h[i];
        }
    }

    fn diff(&self, hstar: &[T]) -> Vec<T> {
        hstar.iter().zip(&self.h_mu).map(|(&a, &b)| a - b).collect()
    }

    pub fn log_posterior(&self, state: &[T]) -> Result<T> {
        self.check_state(state)?;
        let n = self.n();
        let r2 = self.prior_norm_sq(state)?;
        let d = self.diff(&state[..n]);
        let q = self.precision.quad_form(&d);
        let like = match self.mode {
            Mode::Known => -T::lit(0.5) * q,
            Mode::Unknown { .. } => {
                let s = state[n];
                -T::from_usize_lossy(n) * s - T::lit(0.5) * (-T::lit(2.0) * s).exp() * q
            }
        };
        Ok(self.prior_value(r2) + like)
    }

    pub fn log_posterior_grad(&self, state: &[T]) -> Result<Vec<T>> {
        self.check_state(state)?;
        let n = self.n();
        let r2 = self.prior_norm_sq(state)?;
        let d = self.diff(&state[..n]);
        let pd = self.precision.matvec(&d);
        let mut grad = vec![T::zero(); self.state_dim()];
        match self.mode {
            Mode::Known => {
                for i in 0..n {
                    grad[i] = -pd[i];
                }
            }
            Mode::Unknown { .. } => {
                let w = (-T::lit(2.0) * state[n]).exp();
                for i in 0..n {
                    grad[i] = -w * pd[i];
                }
                grad[n] = -T::from_usize_lossy(n) + w * dot(&d, &pd);
            }
        }
        self.add_prior_grad(state, r2, &mut grad);
        Ok(grad)
    }

    /// Analytic Hessian of the log posterior.
    pub fn hessian(&self, state: &[T]) -> Result<Matrix<T>> {
        self.check_state(state)?;
        let (n, nh) = (self.n(), self.nh());
        let r2 = self.prior_norm_sq(state)?;
        let dim = self.state_dim();
        let mut hess = Matrix::zeros(dim, dim);
        match self.mode {
            Mode::Known => hess.set_block(0, 0, &self.precision.scale(-T::one())),
            Mode::Unknown { .. } => {
                let w = (-T::lit(2.0) * state[n]).exp();
                let d = self.diff(&state[..n]);
                let pd = self.precision.matvec(&d);
                hess.set_block(0, 0, &self.precision.scale(-w));
                for i in 0..n {
                    let v = T::lit(2.0) * w * pd[i];
                    hess[(i, n)] = v;
                    hess[(n, i)] = v;
                }
                hess[(n, n)] = -T::lit(2.0) * w * dot(&d, &pd);
            }
        }
        if self.include_prior {
            let k = T::from_usize_lossy(nh);
            for i in 0..nh {
                for j in 0..nh {
                    let delta = if i == j { T::one() / r2 } else { T::zero() };
                    hess[(i, j)] -= k * (delta - T::lit(2.0) * state[i] * state[j] / (r2 * r2));
                }
            }
        }
        Ok(hess)
    }

    /// Noise precision used by the MAP iteration: `Σ⁻¹` when known, or
    /// `E*ᵀE* / σ²` at the initial scale.
    fn map_precision(&self) -> Matrix<T> {
        match self.mode {
            Mode::Known => self.precision.clone(),
            Mode::Unknown { initial } => self.precision.scale(T::one() / (initial * initial)),
        }
    }

    /// Fixed-point iteration for the maximum posterior, started at `h*_μ`.
    ///
    /// In unknown-noise mode `σ_y` is held at its initial value.
    pub fn map_estimate(&self, tol: T, max_iter: usize) -> Result<Vec<T>> {
        let (n, nh) = (self.n(), self.nh());
        let prec = self.map_precision();
        let h_mu_norm = self.h_mu_norm();
        if !self.include_prior {
            return Ok(self.h_mu.clone());
        }
        if !(h_mu_norm > T::zero()) {
            return Err(Error::PoleCollapse { norm: 0.0 });
        }
        let rhs = prec.matvec(&self.h_mu);
        let k = T::from_usize_lossy(nh);
        let mut h = self.h_mu.clone();
        let mut change = T::infinity();
        for _ in 0..max_iter {
            let r2: T = h[..nh].iter().map(|&v| v * v).sum();
            let mut a = prec.clone();
            for i in 0..nh {
                a[(i, i)] += k / r2;
            }
            let next = Cholesky::new(&a)?.solve(&rhs);
            let diff: Vec<T> = next.iter().zip(&h).map(|(&p, &q)| p - q).collect();
            let next_norm = norm2(&next);
            change = norm2(&diff) / next_norm.max(T::min_positive_value());
            h = next;
            let hn = norm2(&h[..nh]);
            if hn < T::lit(POLE_COLLAPSE_RATIO) * h_mu_norm {
                return Err(Error::PoleCollapse { norm: hn.to_f64_lossy() });
            }
            if change < tol {
                debug_assert_eq!(h.len(), n);
                return Ok(h);
            }
        }
        Err(Error::NoConvergence { iterations: max_iter, residual: change.to_f64_lossy() })
    }

    /// Non-centered view used for sampling with unknown noise.
    pub fn non_centered(&self) -> Result<NonCentered<'_, T>> {
        if !self.is_unknown_noise() {
            return Err(Error::WrongRegime { expected: "unknown-noise", actual: "known-noise" });
        }
        Ok(NonCentered { density: self })
    }
}

pub(crate) fn default_noise_init<T: Scalar>(y: &[T]) -> T {
    let n = T::from_usize_lossy(y.len());
    let mean = y.iter().copied().sum::<T>() / n;
    let var = y.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let s = var.sqrt() / T::lit(10.0);
    if s > T::zero() {
        s
    } else {
        T::one()
    }
}

/// Unknown-noise posterior in standardized-residual coordinates `(r, s)`:
/// `h* = h*_μ + e^s E*⁻¹ r`, `s = log σ_y`.
///
/// The Jacobian cancels the `−N s` likelihood factor, leaving
/// `log p = −N_h log‖h‖ − ½‖r‖²`. This removes the funnel between `σ_y`
/// and `h*` that otherwise pins samplers near the interpolation pole.
#[derive(Debug, Clone, Copy)]
pub struct NonCentered<'a, T> {
    density: &'a PosteriorDensity<T>,
}

impl<T: Scalar> NonCentered<'_, T> {
    pub fn dim(&self) -> usize {
        self.density.n() + 1
    }

    /// Maps `(r, s)` to the centered state `(h*, s)`.
    pub fn to_centered(&self, state: &[T]) -> Vec<T> {
        let n = self.density.n();
        let es = state[n].exp();
        let b = self.density.basis.estar_lu().solve(&state[..n]);
        let mut out: Vec<T> = self.density.h_mu.iter().zip(&b).map(|(&m, &v)| m + es * v).collect();
        out.push(state[n]);
        out
    }

    /// Inverse of [`Self::to_centered`].
    pub fn from_centered(&self, state: &[T]) -> Vec<T> {
        let n = self.density.n();
        let es = (-state[n]).exp();
        let d = self.density.diff(&state[..n]);
        let mut out: Vec<T> = self.density.basis.estar().matvec(&d).into_iter().map(|v| v * es).collect();
        out.push(state[n]);
        out
    }

    pub fn log_density(&self, state: &[T]) -> Result<T> {
        let n = self.density.n();
        let c = self.to_centered(state);
        let r2 = self.density.prior_norm_sq(&c)?;
        let rr: T = state[..n].iter().map(|&v| v * v).sum();
        Ok(self.density.prior_value(r2) - T::lit(0.5) * rr)
    }

    pub fn value_grad(&self, state: &[T]) -> Result<(T, Vec<T>)> {
        let n = self.density.n();
        let c = self.to_centered(state);
        let r2 = self.density.prior_norm_sq(&c)?;
        let rr: T = state[..n].iter().map(|&v| v * v).sum();
        let value = self.density.prior_value(r2) - T::lit(0.5) * rr;
        let mut prior_grad = vec![T::zero(); n];
        self.density.add_prior_grad(&c, r2, &mut prior_grad);
        let es = state[n].exp();
        let back = self.density.basis.estar_lu().solve_transpose(&prior_grad);
        let mut grad: Vec<T> = back.iter().zip(&state[..n]).map(|(&b, &r)| es * b - r).collect();
        let d = self.density.diff(&c[..n]);
        grad.push(dot(&d, &prior_grad));
        Ok((value, grad))
    }
}

/// Linear reparametrization `z = Lᵀ x` with approximately unit curvature.
#[derive(Debug, Clone, PartialEq)]
pub enum Preconditioner<T> {
    /// Lower Cholesky factor of the negative Hessian.
    Cholesky(Matrix<T>),
    /// Per-coordinate curvature square roots (fallback).
    Diagonal(Vec<T>),
}

impl<T: Scalar> Preconditioner<T> {
    /// Builds a preconditioner from a Hessian, falling back to its diagonal
    /// when the negative Hessian is not positive definite.
    pub fn from_hessian(hess: &Matrix<T>) -> Self {
        let mut neg = hess.scale(-T::one());
        neg.symmetrize();
        match Cholesky::new(&neg) {
            Ok(ch) => Preconditioner::Cholesky(ch.into_factor()),
            Err(_) => Preconditioner::Diagonal(
                neg.diagonal()
                    .into_iter()
                    .map(|v| if v > T::zero() && v.is_finite() { v.sqrt() } else { T::one() })
                    .collect(),
            ),
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, Preconditioner::Diagonal(_))
    }

    pub fn dim(&self) -> usize {
        match self {
            Preconditioner::Cholesky(l) => l.rows(),
            Preconditioner::Diagonal(d) => d.len(),
        }
    }

    /// `z = Lᵀ x`.
    pub fn whiten(&self, x: &[T]) -> Vec<T> {
        match self {
            Preconditioner::Cholesky(l) => l.tr_matvec(x),
            Preconditioner::Diagonal(d) => x.iter().zip(d).map(|(&v, &s)| v * s).collect(),
        }
    }

    /// `x = L⁻ᵀ z`.
    pub fn unwhiten(&self, z: &[T]) -> Vec<T> {
        match self {
            Preconditioner::Cholesky(l) => crate::linalg::solve_lower_transpose(l, z),
            Preconditioner::Diagonal(d) => z.iter().zip(d).map(|(&v, &s)| v / s).collect(),
        }
    }

    /// Gradient with respect to `z` given the gradient in `x`: `L⁻¹ g`.
    pub fn whiten_grad(&self, g: &[T]) -> Vec<T> {
        match self {
            Preconditioner::Cholesky(l) => crate::linalg::solve_lower(l, g),
            Preconditioner::Diagonal(d) => g.iter().zip(d).map(|(&v, &s)| v / s).collect(),
        }
    }
}

/// Laplace preconditioner at `state` (normally the MAP).
pub fn laplace_precondition<T: Scalar>(state: &[T], density: &PosteriorDensity<T>) -> Result<Preconditioner<T>> {
    Ok(Preconditioner::from_hessian(&density.hessian(state)?))
}

pub fn log_posterior<T: Scalar>(state: &[T], density: &PosteriorDensity<T>) -> Result<T> {
    density.log_posterior(state)
}

pub fn log_posterior_grad<T: Scalar>(state: &[T], density: &PosteriorDensity<T>) -> Result<Vec<T>> {
    density.log_posterior_grad(state)
}

pub fn map_estimate<T: Scalar>(density: &PosteriorDensity<T>, tol: T, max_iter: usize) -> Result<Vec<T>> {
    density.map_estimate(tol, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Eta;

    fn setup(noise: NoiseModel<f64>) -> PosteriorDensity<f64> {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 + 0.3 * (i as f64 * 2.1).sin()).collect();
        let y: Vec<f64> = xs.iter().map(|v| (v * 0.7).sin() + 0.05 * (v * 13.0).cos()).collect();
        let x = Matrix::from_vec(10, 1, xs).unwrap();
        let basis = SubspaceBasis::new(&x, Eta::new(1.5).unwrap()).unwrap();
        PosteriorDensity::new(basis, &y, noise).unwrap()
    }

    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * (1.0 + x[i].abs());
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], rel: f64) {
        let scale = b.iter().fold(1e-8f64, |m, v| m.max(v.abs()));
        for (p, q) in a.iter().zip(b) {
            assert!((p - q).abs() <= rel * scale, "{p} vs {q}");
        }
    }

    #[test]
    fn value_at_h_mu() {
        let d = setup(NoiseModel::homoscedastic(0.1, 10));
        let lp = d.log_posterior(d.h_mu()).unwrap();
        assert!((lp + 8.0 * d.h_mu_norm().ln()).abs() < 1e-10);
    }

    #[test]
    fn scale_invariance_without_likelihood() {
        let d = setup(NoiseModel::homoscedastic(0.1, 10));
        let mut s = d.h_mu().to_vec();
        let base = d.prior_value(s[..8].iter().map(|v| v * v).sum());
        for v in &mut s[..8] {
            *v *= 3.0;
        }
        let scaled = d.prior_value(s[..8].iter().map(|v| v * v).sum());
        assert!((scaled - base + 8.0 * 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        for noise in [NoiseModel::homoscedastic(0.3, 10), NoiseModel::unknown()] {
            let d = setup(noise);
            let mut state: Vec<f64> = d.h_mu().iter().enumerate().map(|(i, v)| v * 0.8 + 0.01 * i as f64).collect();
            if d.is_unknown_noise() {
                state.push(-1.5);
            }
            let g = d.log_posterior_grad(&state).unwrap();
            assert_close(&g, &fd_grad(|s| d.log_posterior(s).unwrap(), &state), 1e-5);
            let h = d.hessian(&state).unwrap();
            for i in 0..state.len() {
                let col = fd_grad(|s| d.log_posterior_grad(s).unwrap()[i], &state);
                assert_close(h.row(i), &col, 1e-4);
            }
            // prior gradient vanishes on the polynomial block
            let flat = d.clone().without_prior();
            let diff: Vec<f64> = g.iter().zip(flat.log_posterior_grad(&state).unwrap()).map(|(a, b)| a - b).collect();
            assert!(diff[8..10].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn pole_is_a_domain_error() {
        let d = setup(NoiseModel::homoscedastic(0.3, 10));
        let mut s = d.h_mu().to_vec();
        s[..8].iter_mut().for_each(|v| *v = 0.0);
        assert!(matches!(d.log_posterior(&s), Err(Error::DomainError(_))));
    }

    #[test]
    fn map_is_stationary_and_shrinks() {
        let d = setup(NoiseModel::homoscedastic(0.05, 10));
        let map = d.map_estimate(1e-12, 500).unwrap();
        let g = d.log_posterior_grad(&map).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");
        assert!(norm2(&map[..8]) <= d.h_mu_norm());
        let tiny = setup(NoiseModel::homoscedastic(1e-12, 10));
        let map = tiny.map_estimate(1e-12, 200).unwrap();
        assert_close(&map, tiny.h_mu(), 1e-6);
    }

    #[test]
    fn laplace_recovers_precision_without_prior() {
        let d = setup(NoiseModel::homoscedastic(0.2, 10)).without_prior();
        let p = laplace_precondition(d.h_mu(), &d).unwrap();
        let Preconditioner::Cholesky(l) = p else { panic!("fallback") };
        let rebuilt = l.matmul(&l.transpose());
        assert!(rebuilt.sub(d.precision()).max_abs() < 1e-8 * d.precision().max_abs());
    }

    #[test]
    fn non_centered_round_trip_and_gradient() {
        let d = setup(NoiseModel::unknown());
        let nc = d.non_centered().unwrap();
        let state: Vec<f64> = (0..11).map(|i| 0.3 * (i as f64).sin()).collect();
        let back = nc.from_centered(&nc.to_centered(&state));
        assert_close(&back, &state, 1e-9);
        // Jacobian of the map is e^{N s} |det E*⁻¹|
        let centered = d.log_posterior(&nc.to_centered(&state)).unwrap();
        let lp = nc.log_density(&state).unwrap();
        let other: Vec<f64> = state.iter().map(|v| v * 0.5).collect();
        let shift = |st: &[f64]| nc.log_density(st).unwrap() - d.log_posterior(&nc.to_centered(st)).unwrap() - 10.0 * st[10];
        assert!((shift(&state) - shift(&other)).abs() < 1e-9 && (lp - centered - 10.0 * state[10] - shift(&state)).abs() < 1e-12);
        let (_, g) = nc.value_grad(&state).unwrap();
        assert_close(&g, &fd_grad(|s| nc.log_density(s).unwrap(), &state), 1e-5);
    }
}
