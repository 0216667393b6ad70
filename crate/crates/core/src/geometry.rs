//! Regularity parameter, nullspace monomials, and the polyharmonic kernel
//! matrices `‖x − x'‖^{2η}`.

use std::fmt;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Distance (relative to the data extent) below which two inputs count as
/// the same point.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

/// Regularity exponent η: a positive non-integer.
///
/// `floor()` is the degree of differentiability of sample paths and `hurst()`
/// the Hölder exponent of the highest derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eta {
    value: f64,
    floor: usize,
}

impl Eta {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveEta(value));
        }
        if (value - value.round()).abs() <= 1e-6 {
            return Err(Error::IntegerEta(value));
        }
        Ok(Self { value, floor: value.floor() as usize })
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.value
    }

    /// `⌊η⌋`
    #[inline]
    pub fn floor(&self) -> usize {
        self.floor
    }

    /// `⌈η⌉`
    #[inline]
    pub fn ceil(&self) -> usize {
        self.floor + 1
    }

    #[inline]
    pub fn hurst(&self) -> f64 {
        self.value - self.floor as f64
    }

    /// `(−1)^{⌈η⌉}`
    #[inline]
    pub fn sign(&self) -> f64 {
        if self.ceil().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    pub fn as_scalar<T: Scalar>(&self) -> T {
        T::lit(self.value)
    }
}

impl fmt::Display for Eta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

/// Exponents of a monomial `x^ν = Π_d x_d^{ν_d}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    exponents: Vec<usize>,
}

impl MultiIndex {
    pub fn new(exponents: Vec<usize>) -> Self {
        Self { exponents }
    }

    pub fn exponents(&self) -> &[usize] {
        &self.exponents
    }

    /// `|ν|`
    pub fn degree(&self) -> usize {
        self.exponents.iter().sum()
    }

    pub fn eval<T: Scalar>(&self, x: &[T]) -> T {
        self.exponents
            .iter()
            .zip(x)
            .fold(T::one(), |acc, (&e, &xd)| if e == 0 { acc } else { acc * xd.powi(e as i32) })
    }
}

/// All multi-indices with `|ν| < η`, graded by degree and lexicographically
/// descending within a degree: for D = 2 the order is
/// `(0,0), (1,0), (0,1), (2,0), (1,1), (0,2), …`.
pub fn enumerate_multi_indices(dim: usize, eta: Eta) -> Vec<MultiIndex> {
    assert!(dim >= 1, "input dimension must be at least 1");
    let mut out = Vec::with_capacity(nullspace_dim(dim, eta));
    let mut buf = vec![0; dim];
    for degree in 0..=eta.floor() {
        compositions(degree, 0, &mut buf, &mut out);
    }
    out
}

fn compositions(remaining: usize, pos: usize, buf: &mut [usize], out: &mut Vec<MultiIndex>) {
    if pos + 1 == buf.len() {
        buf[pos] = remaining;
        out.push(MultiIndex::new(buf.to_vec()));
        return;
    }
    for e in (0..=remaining).rev() {
        buf[pos] = e;
        compositions(remaining - e, pos + 1, buf, out);
    }
}

/// `N₀ = binom(⌊η⌋ + D, ⌊η⌋)`
pub fn nullspace_dim(dim: usize, eta: Eta) -> usize {
    binomial(eta.floor() + dim, eta.floor())
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Isotropic affine map `u = (x − shift) / scale` taking the inputs into the
/// unit box. A single scale is shared by all features so distances stay
/// proportional.
#[derive(Debug, Clone, PartialEq)]
pub struct InputFrame<T> {
    pub shift: Vec<T>,
    pub scale: T,
}

impl<T: Scalar> InputFrame<T> {
    pub fn identity(dim: usize) -> Self {
        Self { shift: vec![T::zero(); dim], scale: T::one() }
    }

    pub fn fit(x: &Matrix<T>) -> Self {
        let dim = x.cols();
        let mut lo = vec![T::infinity(); dim];
        let mut hi = vec![T::neg_infinity(); dim];
        for i in 0..x.rows() {
            for (d, &v) in x.row(i).iter().enumerate() {
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
        }
        let extent = lo.iter().zip(&hi).map(|(&l, &h)| h - l).fold(T::zero(), T::max);
        let scale = if extent > T::zero() && extent.is_finite() { extent } else { T::one() };
        let shift = lo.into_iter().map(|v| if v.is_finite() { v } else { T::zero() }).collect();
        Self { shift, scale }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.shift).map(|(&v, &s)| (v - s) / self.scale).collect()
    }

    pub fn apply_rows(&self, x: &Matrix<T>) -> Matrix<T> {
        Matrix::from_fn(x.rows(), x.cols(), |i, d| (x[(i, d)] - self.shift[d]) / self.scale)
    }

    pub fn invert(&self, u: &[T]) -> Vec<T> {
        u.iter().zip(&self.shift).map(|(&v, &s)| v * self.scale + s).collect()
    }
}

#[inline]
pub(crate) fn dist_sq<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&p, &q)| (p - q) * (p - q)).sum()
}

/// `‖r‖^{2η}` from the squared distance.
#[inline]
pub(crate) fn kernel_from_sq<T: Scalar>(r2: T, eta: T) -> T {
    if r2 == T::zero() {
        T::zero()
    } else {
        r2.powf(eta)
    }
}

/// First pair of rows closer than the duplicate tolerance, relative to the
/// coordinate extent of `x`.
pub fn find_duplicate<T: Scalar>(x: &Matrix<T>) -> Option<(usize, usize)> {
    let extent = InputFrame::fit(x).scale;
    let tol = T::lit(DUPLICATE_TOLERANCE) * extent;
    let tol2 = tol * tol;
    (0..x.rows()).find_map(|i| (0..i).find(|&j| dist_sq(x.row(i), x.row(j)) <= tol2).map(|j| (j, i)))
}

/// `G_nm = ‖x_n − x_m‖^{2η}`.
pub fn greens_matrix<T: Scalar>(x: &Matrix<T>, eta: Eta) -> Result<Matrix<T>> {
    if let Some((i, j)) = find_duplicate(x) {
        return Err(Error::DuplicatePoints(i, j));
    }
    Ok(greens_matrix_unchecked(x, eta))
}

pub(crate) fn greens_matrix_unchecked<T: Scalar>(x: &Matrix<T>, eta: Eta) -> Matrix<T> {
    let n = x.rows();
    let e = eta.as_scalar::<T>();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = kernel_from_sq(dist_sq(x.row(i), x.row(j)), e);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `M_{νn} = x_n^ν`, one row per multi-index.
pub fn monomial_matrix<T: Scalar>(x: &Matrix<T>, indices: &[MultiIndex]) -> Matrix<T> {
    Matrix::from_fn(indices.len(), x.rows(), |k, n| indices[k].eval(x.row(n)))
}

/// `g_n = ‖x_t − x_n‖^{2η}`.
pub fn greens_vector<T: Scalar>(xt: &[T], x: &Matrix<T>, eta: Eta) -> Vec<T> {
    let e = eta.as_scalar::<T>();
    (0..x.rows()).map(|n| kernel_from_sq(dist_sq(xt, x.row(n)), e)).collect()
}

/// `m_ν = x_t^ν`.
pub fn monomial_vector<T: Scalar>(xt: &[T], indices: &[MultiIndex]) -> Vec<T> {
    indices.iter().map(|nu| nu.eval(xt)).collect()
}

/// Constant relating the squared η-norm of a constrained Green's-function
/// combination to `aᵀ G a`:
///
/// `C_η = (−1)^{⌈η⌉} Γ(η+½) π^{(D+1)/2} / (Γ(η+D/2) Γ(2η+1))`.
pub fn eta_norm_constant(dim: usize, eta: Eta) -> f64 {
    let e = eta.value();
    let d = dim as f64;
    let log_mag = ln_gamma(e + 0.5) + 0.5 * (d + 1.0) * std::f64::consts::PI.ln()
        - ln_gamma(e + 0.5 * d)
        - ln_gamma(2.0 * e + 1.0);
    eta.sign() * log_mag.exp()
}
