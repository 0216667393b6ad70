//! η-orthonormal coordinates for the data-spanned function subspace.
//!
//! A state `h* = [h; c]` holds `N_h = N − N₀` coordinates along an
//! η-orthonormal basis of constraint-satisfying Green's combinations,
//! followed by `N₀` polynomial coefficients. All coordinates refer to the
//! basis's input frame.

use crate::error::{Error, Result};
use crate::geometry::{greens_vector, monomial_vector, Eta, InputFrame};
use crate::interpolate::{PolyharmonicSpline, SaddleSystem};
use crate::linalg::{dot, norm2, solve_lower, Cholesky, Lu, Matrix};
use crate::scalar::Scalar;

/// Orthonormal basis `H`, the evaluation map `E* = [G H, Mᵀ]` and the
/// saddle system they were built from.
#[derive(Debug, Clone)]
pub struct SubspaceBasis<T> {
    system: SaddleSystem<T>,
    h: Matrix<T>,
    estar: Matrix<T>,
    estar_lu: Lu<T>,
}

impl<T: Scalar> SubspaceBasis<T> {
    pub fn new(x: &Matrix<T>, eta: Eta) -> Result<Self> {
        Self::from_system(SaddleSystem::new(x, eta)?)
    }

    pub fn from_system(system: SaddleSystem<T>) -> Result<Self> {
        system.require_dof()?;
        let h = orthonormal_columns(&system)?;
        let k = system.kernels();
        let gh = k.g.matmul(&h);
        let (n, nh) = (system.n(), h.cols());
        let mut estar = Matrix::zeros(n, n);
        estar.set_block(0, 0, &gh);
        estar.set_block(0, nh, &k.m.transpose());
        let estar_lu = Lu::new(&estar)?;
        Ok(Self { system, h, estar, estar_lu })
    }

    pub fn system(&self) -> &SaddleSystem<T> {
        &self.system
    }

    pub fn frame(&self) -> &InputFrame<T> {
        self.system.frame()
    }

    pub fn eta(&self) -> Eta {
        self.system.eta()
    }

    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn n0(&self) -> usize {
        self.system.n0()
    }

    pub fn nh(&self) -> usize {
        self.h.cols()
    }

    /// `N × N_h` coefficient columns.
    pub fn h(&self) -> &Matrix<T> {
        &self.h
    }

    /// Block-diagonal extension `[[H, 0], [0, I]]`.
    pub fn h_star(&self) -> Matrix<T> {
        let (n, n0, nh) = (self.n(), self.n0(), self.nh());
        let mut hs = Matrix::zeros(n + n0, n);
        hs.set_block(0, 0, &self.h);
        hs.set_block(n, nh, &Matrix::identity(n0));
        hs
    }

    pub fn estar(&self) -> &Matrix<T> {
        &self.estar
    }

    pub fn estar_lu(&self) -> &Lu<T> {
        &self.estar_lu
    }

    /// Solves `E* h*_μ = y`.
    pub fn coordinates(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: y.len() });
        }
        Ok(self.estar_lu.solve(y))
    }

    /// `(h*_μ, E*ᵀ Σ_y⁻¹ E*)` for data `y` with noise covariance `sigma_y`.
    pub fn to_subspace(&self, y: &[T], sigma_y: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
        let n = self.n();
        if sigma_y.rows() != n || sigma_y.cols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: sigma_y.rows() });
        }
        let h_mu = self.coordinates(y)?;
        let chol = Cholesky::new(sigma_y)?;
        // W = L⁻¹ E*, so Wᵀ W = E*ᵀ Σ⁻¹ E* stays symmetric
        let mut w = Matrix::zeros(n, n);
        for j in 0..n {
            let col = solve_lower(chol.factor(), &self.estar.column(j));
            for i in 0..n {
                w[(i, j)] = col[i];
            }
        }
        Ok((h_mu, w.transpose().matmul(&w)))
    }

    /// Green's and polynomial coefficients `(H h, c)` in frame coordinates.
    pub fn coefficients(&self, hstar: &[T]) -> (Vec<T>, Vec<T>) {
        let nh = self.nh();
        (self.h.matvec(&hstar[..nh]), hstar[nh..].to_vec())
    }

    pub fn spline(&self, hstar: &[T]) -> PolyharmonicSpline<T> {
        let (a, c) = self.coefficients(hstar);
        self.system.spline(a, c)
    }

    /// `e(x_t)` with `e(x_t)ᵀ h* = f_{h*}(x_t)`.
    pub fn eval_functional(&self, xt: &[T]) -> Result<Vec<T>> {
        if xt.len() != self.system.dim() {
            return Err(Error::DimensionMismatch { expected: self.system.dim(), got: xt.len() });
        }
        let u = self.frame().apply(xt);
        let g = greens_vector(&u, self.system.frame_points(), self.eta());
        let mut e = self.h.tr_matvec(&g);
        e.extend(monomial_vector(&u, self.system.indices()));
        Ok(e)
    }
}

pub fn build_orthonormal_basis<T: Scalar>(x: &Matrix<T>, eta: Eta) -> Result<SubspaceBasis<T>> {
    SubspaceBasis::new(x, eta)
}

pub fn to_subspace<T: Scalar>(y: &[T], sigma_y: &Matrix<T>, basis: &SubspaceBasis<T>) -> Result<(Vec<T>, Matrix<T>)> {
    basis.to_subspace(y, sigma_y)
}

pub fn eval_functional<T: Scalar>(xt: &[T], basis: &SubspaceBasis<T>) -> Result<Vec<T>> {
    basis.eval_functional(xt)
}

/// Points, in data order, whose monomial columns first reach full rank.
fn unisolvent_pivots<T: Scalar>(m: &Matrix<T>) -> Result<Vec<usize>> {
    let n0 = m.rows();
    let mut q: Vec<Vec<T>> = Vec::with_capacity(n0);
    let mut pivots = Vec::with_capacity(n0);
    for p in 0..m.cols() {
        if pivots.len() == n0 {
            break;
        }
        let v = m.column(p);
        let mut r = v.clone();
        for _ in 0..2 {
            for qi in &q {
                let s = dot(qi, &r);
                r.iter_mut().zip(qi).for_each(|(ri, &qv)| *ri -= s * qv);
            }
        }
        let rn = norm2(&r);
        if rn > T::lit(1e-8) * norm2(&v) {
            q.push(r.into_iter().map(|x| x / rn).collect());
            pivots.push(p);
        }
    }
    if pivots.len() < n0 {
        return Err(Error::SingularSystem { rcond: 0.0 });
    }
    Ok(pivots)
}

/// Staircase nullspace matrix orthonormalized in the η inner product.
///
/// Column `j` of the raw matrix lives on the pivot points plus the `j`-th
/// remaining point (unit weight there), so the nested spans match the
/// sequence of test functions. Two Cholesky passes restore orthonormality
/// to working precision.
fn orthonormal_columns<T: Scalar>(system: &SaddleSystem<T>) -> Result<Matrix<T>> {
    let k = system.kernels();
    let (n, n0) = (system.n(), system.n0());
    let nh = n - n0;
    let pivots = unisolvent_pivots(&k.m)?;
    let rest: Vec<usize> = (0..n).filter(|i| !pivots.contains(i)).collect();
    let a0 = Matrix::from_fn(n0, n0, |r, c| k.m[(r, pivots[c])]);
    let lu = Lu::new(&a0)?;
    let mut z = Matrix::zeros(n, nh);
    for (j, &p) in rest.iter().enumerate() {
        let w = lu.solve(&k.m.column(p));
        for (i, &piv) in pivots.iter().enumerate() {
            z[(piv, j)] = -w[i];
        }
        z[(p, j)] = T::one();
    }
    let c = system.norm_constant();
    let mut h = z;
    for _ in 0..2 {
        let mut gram = h.transpose().matmul(&k.g.matmul(&h)).scale(c);
        gram.symmetrize();
        let chol = Cholesky::new(&gram).map_err(|_| Error::SingularSystem { rcond: 0.0 })?;
        let mut next = Matrix::zeros(n, nh);
        for i in 0..n {
            let row = solve_lower(chol.factor(), h.row(i));
            next.row_mut(i).copy_from_slice(&row);
        }
        h = next;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpolate::solve_interpolation;

    fn eta(v: f64) -> Eta {
        Eta::new(v).unwrap()
    }

    fn xs_1d(n: usize) -> Matrix<f64> {
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.61).sin() * 3.0 + i as f64 * 0.2).collect();
        Matrix::from_vec(n, 1, v).unwrap()
    }

    fn gram_error(b: &SubspaceBasis<f64>) -> f64 {
        let g = &b.system().kernels().g;
        let gram = b.h().transpose().matmul(&g.matmul(b.h())).scale(b.system().norm_constant());
        gram.sub(&Matrix::identity(b.nh())).max_abs()
    }

    #[test]
    fn orthonormal_and_constrained() {
        let b = SubspaceBasis::new(&xs_1d(8), eta(1.5)).unwrap();
        assert_eq!((b.n0(), b.nh()), (2, 6));
        assert!(gram_error(&b) < 1e-8);
        assert!(b.system().kernels().m.matmul(b.h()).max_abs() < 1e-8);
        assert!(b.estar_lu().rcond() > 1e-14);
    }

    #[test]
    fn single_column_for_minimal_data() {
        let b = SubspaceBasis::new(&xs_1d(3), eta(1.5)).unwrap();
        assert_eq!(b.h().cols(), 1);
    }

    #[test]
    fn staircase_pattern_and_sign() {
        let b = SubspaceBasis::new(&xs_1d(7), eta(1.5)).unwrap();
        for j in 0..b.nh() {
            let last = b.n0() + j;
            for n in last + 1..b.n() {
                assert_eq!(b.h()[(n, j)], 0.0);
            }
            assert!(b.h()[(last, j)] > 0.0);
        }
    }

    #[test]
    fn sorted_grid_data_still_builds() {
        // the first three points are collinear
        let rows: Vec<Vec<f64>> = (0..4).flat_map(|i| (0..4).map(move |j| vec![i as f64, j as f64])).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let b = SubspaceBasis::new(&x, eta(1.5)).unwrap();
        assert!(gram_error(&b) < 1e-8);
        assert!(b.system().kernels().m.matmul(b.h()).max_abs() < 1e-8);
    }

    #[test]
    fn round_trip_and_covariance() {
        let x = xs_1d(9);
        let y: Vec<f64> = (0..9).map(|i| (i as f64).cos() + 0.1 * i as f64).collect();
        let b = SubspaceBasis::new(&x, eta(1.5)).unwrap();
        let sigma = Matrix::identity(9).scale(0.25);
        let (h_mu, prec) = b.to_subspace(&y, &sigma).unwrap();
        let expected = b.estar().transpose().matmul(b.estar()).scale(4.0);
        assert!(prec.sub(&expected).max_abs() < 1e-9 * expected.max_abs());
        let spline = b.spline(&h_mu);
        let direct = solve_interpolation(&x, &y, eta(1.5)).unwrap();
        for i in 0..9 {
            assert!((spline.evaluate(x.row(i)).unwrap() - y[i]).abs() < 1e-8);
            let e = b.eval_functional(x.row(i)).unwrap();
            assert!((dot(&e, &h_mu) - y[i]).abs() < 1e-8);
        }
        for (p, q) in spline.frame_a().iter().zip(direct.frame_a()) {
            assert!((p - q).abs() < 1e-8 * (1.0 + q.abs()));
        }
        // subspace Euclidean norm is the η-norm
        let norm_sq: f64 = h_mu[..b.nh()].iter().map(|v| v * v).sum();
        let frame_norm = b.system().frame_norm_sq(direct.frame_a());
        assert!((norm_sq - frame_norm).abs() < 1e-8 * frame_norm);
    }

    #[test]
    fn functional_matches_spline() {
        let x = Matrix::from_rows(&[vec![0.1, 0.2], vec![0.7, 0.3], vec![0.4, 0.9], vec![0.8, 0.8], vec![0.3, 0.5]]).unwrap();
        let b = SubspaceBasis::new(&x, eta(1.5)).unwrap();
        let h1: [f64; 5] = [0.3, -1.2, 0.5, 2.0, -0.7];
        let h2 = [1.0, 0.4, -0.2, 0.1, 0.9];
        let xt = [0.55, 0.45];
        let e = b.eval_functional(&xt).unwrap();
        let s1 = b.spline(&h1).evaluate(&xt).unwrap();
        assert!((dot(&e, &h1) - s1).abs() < 1e-9);
        let sum: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();
        assert!((dot(&e, &sum) - dot(&e, &h1) - dot(&e, &h2)).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_spd_noise() {
        let b = SubspaceBasis::new(&xs_1d(4), eta(0.5)).unwrap();
        let bad = Matrix::from_diag(&[1.0, -1.0, 1.0, 1.0]);
        assert_eq!(b.to_subspace(&[0.0; 4], &bad).unwrap_err(), Error::NotPositiveDefinite);
    }
}
