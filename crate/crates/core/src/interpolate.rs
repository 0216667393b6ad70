//! Polyharmonic-spline interpolation and its Student-t posterior.
//!
//! Inputs are mapped into the unit box by an isotropic [`InputFrame`] before
//! any kernel matrix is assembled. The interpolant, test functions and
//! posterior scales are affine-covariant, so the frame changes nothing but
//! the conditioning of the saddle system.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};

use crate::error::{Error, Result};
use crate::geometry::{
    dist_sq, enumerate_multi_indices, eta_norm_constant, find_duplicate, greens_matrix_unchecked,
    greens_vector, monomial_matrix, monomial_vector, Eta, InputFrame, MultiIndex, DUPLICATE_TOLERANCE,
};
use crate::linalg::{dot, norm_inf, Lu, Matrix};
use crate::scalar::Scalar;

/// Relative threshold on `|f|²_η / ‖y‖²` below which data counts as an exact
/// nullspace polynomial.
pub const POLYNOMIAL_DATA_THRESHOLD: f64 = 1e-12;

/// Green's, monomial and saddle matrices for one set of inputs.
#[derive(Debug, Clone)]
pub struct KernelMatrices<T> {
    /// `N × N`, `G_nm = ‖x_n − x_m‖^{2η}`.
    pub g: Matrix<T>,
    /// `N₀ × N` monomials in graded-lexicographic order.
    pub m: Matrix<T>,
    /// `[[G, Mᵀ], [M, 0]]`.
    pub saddle: Matrix<T>,
}

impl<T: Scalar> KernelMatrices<T> {
    pub fn new(x: &Matrix<T>, eta: Eta, indices: &[MultiIndex]) -> Result<Self> {
        if let Some((i, j)) = find_duplicate(x) {
            return Err(Error::DuplicatePoints(i, j));
        }
        let g = greens_matrix_unchecked(x, eta);
        let m = monomial_matrix(x, indices);
        let saddle = saddle_matrix(&g, &m);
        Ok(Self { g, m, saddle })
    }
}

pub(crate) fn saddle_matrix<T: Scalar>(g: &Matrix<T>, m: &Matrix<T>) -> Matrix<T> {
    let (n, n0) = (g.rows(), m.rows());
    let mut k = Matrix::zeros(n + n0, n + n0);
    k.set_block(0, 0, g);
    k.set_block(n, 0, m);
    k.set_block(0, n, &m.transpose());
    k
}

/// Polyharmonic spline `f(x) = Σ_n a_n ‖x − x_n‖^{2η} + Σ_ν c_ν x^ν`.
///
/// Centers and coefficients are stored in frame coordinates; the public
/// accessors convert to the caller's units.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyharmonicSpline<T> {
    eta: Eta,
    frame: InputFrame<T>,
    centers: Matrix<T>,
    indices: Vec<MultiIndex>,
    a: Vec<T>,
    c: Vec<T>,
}

/// Interpolating spline returned by [`solve_interpolation`].
pub type InterpolationModel<T> = PolyharmonicSpline<T>;

impl<T: Scalar> PolyharmonicSpline<T> {
    /// Assembles a spline from frame-coordinate centers and coefficients.
    pub fn from_frame_parts(eta: Eta, frame: InputFrame<T>, centers: Matrix<T>, a: Vec<T>, c: Vec<T>) -> Result<Self> {
        let dim = frame.dim();
        if centers.cols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: centers.cols() });
        }
        if a.len() != centers.rows() {
            return Err(Error::DimensionMismatch { expected: centers.rows(), got: a.len() });
        }
        let indices = enumerate_multi_indices(dim, eta);
        if c.len() != indices.len() {
            return Err(Error::DimensionMismatch { expected: indices.len(), got: c.len() });
        }
        Ok(Self { eta, frame, centers, indices, a, c })
    }

    /// Pure polynomial `Σ_ν c_ν u^ν` in frame coordinates (no Green's terms).
    pub fn polynomial(eta: Eta, frame: InputFrame<T>, c: Vec<T>) -> Result<Self> {
        let dim = frame.dim();
        Self::from_frame_parts(eta, frame, Matrix::zeros(0, dim), Vec::new(), c)
    }

    pub fn eta(&self) -> Eta {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.frame.dim()
    }

    pub fn frame(&self) -> &InputFrame<T> {
        &self.frame
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    /// Centers in frame coordinates.
    pub fn frame_centers(&self) -> &Matrix<T> {
        &self.centers
    }

    /// Green's coefficients in frame coordinates.
    pub fn frame_a(&self) -> &[T] {
        &self.a
    }

    /// Polynomial coefficients in frame coordinates.
    pub fn frame_c(&self) -> &[T] {
        &self.c
    }

    /// Green's coefficients for kernels written in the original units,
    /// `a_n / scale^{2η}`.
    pub fn greens_coefficients(&self) -> Vec<T> {
        let k = self.frame.scale.powf(T::lit(2.0 * self.eta.value()));
        self.a.iter().map(|&v| v / k).collect()
    }

    /// Polynomial coefficients with respect to monomials of the original
    /// inputs, in [`Self::indices`] order.
    pub fn polynomial_coefficients(&self) -> Vec<T> {
        polynomial_to_original(&self.indices, &self.c, &self.frame)
    }

    pub fn evaluate(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(self.evaluate_frame(&self.frame.apply(x)))
    }

    pub(crate) fn evaluate_frame(&self, u: &[T]) -> T {
        let g = greens_vector(u, &self.centers, self.eta);
        dot(&g, &self.a) + dot(&monomial_vector(u, &self.indices), &self.c)
    }

    /// Squared η-norm `C_η aᵀ G a` in the caller's units.
    pub fn eta_norm_sq(&self) -> T {
        let g = greens_matrix_unchecked(&self.centers, self.eta);
        let raw = T::lit(eta_norm_constant(self.dim(), self.eta)) * g.quad_form(&self.a);
        raw.max(T::zero()) / self.frame.scale.powf(T::lit(2.0 * self.eta.value()))
    }

    /// `M a` for the stored centers, in frame coordinates.
    pub fn constraint_residual(&self) -> Vec<T> {
        monomial_matrix(&self.centers, &self.indices).matvec(&self.a)
    }
}

/// Re-expresses `Σ_ν c_ν ((x − s)/h)^ν` as `Σ_ν c'_ν x^ν`.
fn polynomial_to_original<T: Scalar>(indices: &[MultiIndex], c: &[T], frame: &InputFrame<T>) -> Vec<T> {
    let mut out = vec![T::zero(); indices.len()];
    for (nu, &coef) in indices.iter().zip(c) {
        if coef == T::zero() {
            continue;
        }
        let scale = frame.scale.powi(nu.degree() as i32);
        // expand Π_d (x_d − s_d)^{ν_d} term by term
        let mut terms: Vec<(Vec<usize>, T)> = vec![(vec![0; nu.exponents().len()], coef / scale)];
        for (d, &e) in nu.exponents().iter().enumerate() {
            let s = frame.shift[d];
            let mut next = Vec::with_capacity(terms.len() * (e + 1));
            for (exps, w) in &terms {
                for k in 0..=e {
                    let binom = T::from_usize_lossy(binomial(e, k));
                    let w2 = *w * binom * (-s).powi((e - k) as i32);
                    let mut ex = exps.clone();
                    ex[d] = k;
                    next.push((ex, w2));
                }
            }
            terms = next;
        }
        for (ex, w) in terms {
            let pos = indices.iter().position(|m| m.exponents() == ex.as_slice()).expect("lower-degree index present");
            out[pos] += w;
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Factored saddle system for a fixed set of inputs. Reused for the
/// interpolant, all test functions, and the orthonormal basis.
#[derive(Debug, Clone)]
pub struct SaddleSystem<T> {
    eta: Eta,
    frame: InputFrame<T>,
    points: Matrix<T>,
    indices: Vec<MultiIndex>,
    kernels: KernelMatrices<T>,
    lu: Lu<T>,
}

impl<T: Scalar> SaddleSystem<T> {
    /// Builds the system with a frame fitted to `x`. Needs at least `N₀`
    /// unisolvent points; interpolation posteriors need one more.
    pub fn new(x: &Matrix<T>, eta: Eta) -> Result<Self> {
        Self::with_frame(x, eta, InputFrame::fit(x))
    }

    pub fn with_frame(x: &Matrix<T>, eta: Eta, frame: InputFrame<T>) -> Result<Self> {
        let dim = x.cols();
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if frame.dim() != dim {
            return Err(Error::DimensionMismatch { expected: frame.dim(), got: dim });
        }
        let indices = enumerate_multi_indices(dim, eta);
        let n0 = indices.len();
        if x.rows() < n0 {
            return Err(Error::TooFewPoints { needed: n0, got: x.rows() });
        }
        let points = frame.apply_rows(x);
        let kernels = KernelMatrices::new(&points, eta, &indices)?;
        let lu = Lu::new(&kernels.saddle)?;
        Ok(Self { eta, frame, points, indices, kernels, lu })
    }

    pub fn eta(&self) -> Eta {
        self.eta
    }

    /// `TooFewPoints` unless there is at least one degree of freedom beyond
    /// the polynomial nullspace.
    pub fn require_dof(&self) -> Result<()> {
        if self.n() < self.n0() + 1 {
            return Err(Error::TooFewPoints { needed: self.n0() + 1, got: self.n() });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.points.rows()
    }

    pub fn n0(&self) -> usize {
        self.indices.len()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn frame(&self) -> &InputFrame<T> {
        &self.frame
    }

    pub fn frame_points(&self) -> &Matrix<T> {
        &self.points
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    /// Kernel matrices in frame coordinates.
    pub fn kernels(&self) -> &KernelMatrices<T> {
        &self.kernels
    }

    pub fn rcond(&self) -> T {
        self.lu.rcond()
    }

    /// `C_η` for this dimension and regularity.
    pub fn norm_constant(&self) -> T {
        T::lit(eta_norm_constant(self.dim(), self.eta))
    }

    /// `scale^{2η}`: converts frame-coordinate squared η-norms to the
    /// caller's units (divide by it).
    pub fn norm_unit(&self) -> T {
        self.frame.scale.powf(T::lit(2.0 * self.eta.value()))
    }

    /// Solves `[[G, Mᵀ], [M, 0]] [a; c] = [y; 0]`.
    pub fn solve(&self, y: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: y.len() });
        }
        let mut rhs = y.to_vec();
        rhs.resize(self.n() + self.n0(), T::zero());
        let mut sol = self.lu.solve(&rhs);
        let c = sol.split_off(self.n());
        Ok((sol, c))
    }

    pub fn interpolant(&self, y: &[T]) -> Result<PolyharmonicSpline<T>> {
        let (a, c) = self.solve(y)?;
        Ok(self.spline(a, c))
    }

    /// Spline over this system's centers with frame-coordinate coefficients.
    pub fn spline(&self, a: Vec<T>, c: Vec<T>) -> PolyharmonicSpline<T> {
        PolyharmonicSpline {
            eta: self.eta,
            frame: self.frame.clone(),
            centers: self.points.clone(),
            indices: self.indices.clone(),
            a,
            c,
        }
    }

    /// `C_η aᵀ G a` in frame coordinates.
    pub fn frame_norm_sq(&self, a: &[T]) -> T {
        (self.norm_constant() * self.kernels.g.quad_form(a)).max(T::zero())
    }

    /// Index of a datapoint within the duplicate tolerance of frame point `u`.
    fn coinciding(&self, u: &[T]) -> Option<usize> {
        let tol = T::lit(DUPLICATE_TOLERANCE);
        (0..self.n()).find(|&n| dist_sq(u, self.points.row(n)) <= tol * tol)
    }

    /// Minimum-norm function equal to 1 at `x_t` and 0 at every datapoint.
    ///
    /// The bordered system `[[0, kᵀ], [k, K]]` is eliminated through the
    /// factored saddle matrix `K`: `a_t = −1 / (kᵀ K⁻¹ k)` and
    /// `[a; c] = −a_t K⁻¹ k` with `k = [g; m]`.
    pub fn test_function(&self, xt: &[T]) -> Result<TestFunction<T>> {
        if xt.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: xt.len() });
        }
        let u = self.frame.apply(xt);
        if let Some(n) = self.coinciding(&u) {
            return Err(Error::CoincidesWithDatapoint(n));
        }
        let mut k = greens_vector(&u, &self.points, self.eta);
        k.extend(monomial_vector(&u, &self.indices));
        let w = self.lu.solve(&k);
        let schur = dot(&k, &w);
        if !(schur.abs() > T::zero()) || !schur.is_finite() {
            return Err(Error::SingularSystem { rcond: 0.0 });
        }
        let a_t = -T::one() / schur;
        let mut coef: Vec<T> = w.iter().map(|&v| -a_t * v).collect();
        let c = coef.split_off(self.n());
        Ok(TestFunction {
            a_t,
            a: coef,
            c,
            xt: xt.to_vec(),
            probe: u,
            eta: self.eta,
            frame: self.frame.clone(),
            centers: self.points.clone(),
            indices: self.indices.clone(),
        })
    }
}

/// Minimum-η-norm function vanishing at the data and equal to 1 at `x_t`.
#[derive(Debug, Clone)]
pub struct TestFunction<T> {
    /// Coefficient of the Green's function centred at the probe.
    pub a_t: T,
    /// Coefficients on the datapoint Green's functions (frame coordinates).
    pub a: Vec<T>,
    /// Polynomial coefficients (frame coordinates).
    pub c: Vec<T>,
    /// Probe location in the caller's units.
    pub xt: Vec<T>,
    probe: Vec<T>,
    eta: Eta,
    frame: InputFrame<T>,
    centers: Matrix<T>,
    indices: Vec<MultiIndex>,
}

impl<T: Scalar> TestFunction<T> {
    pub fn evaluate(&self, x: &[T]) -> Result<T> {
        if x.len() != self.frame.dim() {
            return Err(Error::DimensionMismatch { expected: self.frame.dim(), got: x.len() });
        }
        let u = self.frame.apply(x);
        let e = self.eta.as_scalar::<T>();
        let own = crate::geometry::kernel_from_sq(dist_sq(&u, &self.probe), e);
        let g = greens_vector(&u, &self.centers, self.eta);
        Ok(self.a_t * own + dot(&g, &self.a) + dot(&monomial_vector(&u, &self.indices), &self.c))
    }

    /// Squared η-norm in frame coordinates.
    ///
    /// The quadratic form over `[x_t, X]` collapses to `a_t` by the
    /// defining equations, so this is `C_η a_t`.
    pub fn frame_norm_sq(&self) -> T {
        (T::lit(eta_norm_constant(self.frame.dim(), self.eta)) * self.a_t).max(T::zero())
    }

    /// Squared η-norm in the caller's units.
    pub fn eta_norm_sq(&self) -> T {
        self.frame_norm_sq() / self.frame.scale.powf(T::lit(2.0 * self.eta.value()))
    }

    /// Coefficients over the extended center list `[x_t, x_1, …, x_N]`
    /// (frame coordinates).
    pub fn extended_coefficients(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.a.len() + 1);
        v.push(self.a_t);
        v.extend_from_slice(&self.a);
        v
    }
}

/// Solves the interpolation saddle system and returns the spline.
pub fn solve_interpolation<T: Scalar>(x: &Matrix<T>, y: &[T], eta: Eta) -> Result<InterpolationModel<T>> {
    let system = SaddleSystem::new(x, eta)?;
    system.require_dof()?;
    system.interpolant(y)
}

/// Evaluates a spline; thin wrapper over [`PolyharmonicSpline::evaluate`].
pub fn evaluate<T: Scalar>(model: &InterpolationModel<T>, x: &[T]) -> Result<T> {
    model.evaluate(x)
}

pub fn test_function<T: Scalar>(x: &Matrix<T>, xt: &[T], eta: Eta) -> Result<TestFunction<T>> {
    let system = SaddleSystem::new(x, eta)?;
    system.require_dof()?;
    system.test_function(xt)
}

/// `C_η aᵀ G a` for coefficients satisfying the growth-rate constraints.
pub fn eta_norm_sq<T: Scalar>(a: &[T], g: &Matrix<T>, m: &Matrix<T>, eta: Eta, dim: usize) -> Result<T> {
    let resid = norm_inf(&m.matvec(a));
    let magnitude = a.iter().map(|v| v.abs()).sum::<T>() * m.max_abs();
    let tol = T::lit(1e-6) * magnitude.max(T::one());
    if resid > tol {
        return Err(Error::ConstraintViolated(resid.to_f64_lossy()));
    }
    Ok((T::lit(eta_norm_constant(dim, eta)) * g.quad_form(a)).max(T::zero()))
}

/// Student-t posterior of the function value at one probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointwisePosterior<T> {
    /// Degrees of freedom `N − N₀`.
    pub dof: usize,
    pub mean: T,
    /// t scale parameter; 0 for a point mass.
    pub scale: T,
    /// Standard deviation, defined for `dof > 2`.
    pub sd: Option<T>,
}

impl<T: Scalar> PointwisePosterior<T> {
    fn from_scale(dof: usize, mean: T, scale: T) -> Self {
        let sd = (dof > 2).then(|| {
            let nu = T::from_usize_lossy(dof);
            scale * (nu / (nu - T::lit(2.0))).sqrt()
        });
        Self { dof, mean, scale, sd }
    }

    fn point_mass(dof: usize, mean: T) -> Self {
        Self { dof, mean, scale: T::zero(), sd: (dof > 2).then(T::zero) }
    }
}

/// Interpolant plus everything needed to query pointwise posteriors.
#[derive(Debug, Clone)]
pub struct InterpolationPosterior<T> {
    system: SaddleSystem<T>,
    y: Vec<T>,
    model: InterpolationModel<T>,
    norm_sq: T,
}

impl<T: Scalar> InterpolationPosterior<T> {
    pub fn new(x: &Matrix<T>, y: &[T], eta: Eta) -> Result<Self> {
        Self::from_system(SaddleSystem::new(x, eta)?, y)
    }

    pub fn from_system(system: SaddleSystem<T>, y: &[T]) -> Result<Self> {
        system.require_dof()?;
        let model = system.interpolant(y)?;
        let norm_sq = system.frame_norm_sq(model.frame_a());
        Ok(Self { system, y: y.to_vec(), model, norm_sq })
    }

    pub fn model(&self) -> &InterpolationModel<T> {
        &self.model
    }

    pub fn system(&self) -> &SaddleSystem<T> {
        &self.system
    }

    pub fn dof(&self) -> usize {
        self.system.n() - self.system.n0()
    }

    /// Whether the data lies exactly on a nullspace polynomial.
    pub fn is_polynomial(&self) -> bool {
        let ysq: T = self.y.iter().map(|&v| v * v).sum();
        self.norm_sq <= T::lit(POLYNOMIAL_DATA_THRESHOLD) * ysq
    }

    /// Squared η-norm of the interpolant in the caller's units.
    pub fn eta_norm_sq(&self) -> T {
        self.norm_sq / self.system.norm_unit()
    }

    pub fn pointwise(&self, xt: &[T]) -> Result<PointwisePosterior<T>> {
        let dof = self.dof();
        match self.system.test_function(xt) {
            Err(Error::CoincidesWithDatapoint(n)) => Ok(PointwisePosterior::point_mass(dof, self.y[n])),
            Err(e) => Err(e),
            Ok(tf) => {
                if self.is_polynomial() {
                    return Err(Error::PolynomialData);
                }
                let mean = self.model.evaluate(xt)?;
                let ratio = self.norm_sq / tf.frame_norm_sq();
                let scale = (ratio / T::from_usize_lossy(dof)).sqrt();
                Ok(PointwisePosterior::from_scale(dof, mean, scale))
            }
        }
    }
}

/// Pointwise t-posterior of the interpolating process at `x_t`.
pub fn pointwise_posterior<T: Scalar>(x: &Matrix<T>, y: &[T], eta: Eta, xt: &[T]) -> Result<PointwisePosterior<T>> {
    InterpolationPosterior::new(x, y, eta)?.pointwise(xt)
}

/// Draws one sample path on `grid` by alternately sampling the pointwise
/// t-posterior and adding the draw to the conditioning set.
pub fn draw_sample_path<T: Scalar>(x: &Matrix<T>, y: &[T], eta: Eta, grid: &[Vec<T>], seed: u64) -> Result<Vec<T>> {
    if grid.is_empty() {
        return Ok(Vec::new());
    }
    let dim = x.cols();
    let mut rows: Vec<Vec<T>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
    for p in grid {
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
        }
    }
    let all = Matrix::from_rows(&rows.iter().chain(grid).cloned().collect::<Vec<_>>())?;
    let frame = InputFrame::fit(&all);
    let mut values = y.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path = Vec::with_capacity(grid.len());
    for xt in grid {
        let current = Matrix::from_rows(&rows)?;
        let system = SaddleSystem::with_frame(&current, eta, frame.clone())?;
        let post = InterpolationPosterior::from_system(system, &values)?;
        let (draw, fresh) = match post.pointwise(xt) {
            Ok(p) if p.scale > T::zero() => {
                let t = StudentT::new(p.dof as f64).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                (p.mean + p.scale * T::lit(t.sample(&mut rng)), true)
            }
            // already conditioned on: a datapoint or a repeated probe
            Ok(p) => (p.mean, false),
            Err(Error::PolynomialData) => (post.model().evaluate(xt)?, true),
            Err(e) => return Err(e),
        };
        path.push(draw);
        if fresh {
            rows.push(xt.clone());
            values.push(draw);
        }
    }
    Ok(path)
}
