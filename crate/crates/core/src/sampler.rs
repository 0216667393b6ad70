//! Hamiltonian Monte Carlo over the regression posterior.
//!
//! Every chain runs in whitened coordinates `z = Lᵀ(x − x₀)` around a
//! Laplace approximation, with the step size tuned by dual averaging during
//! burn-in. Chains are independent streams of one master seed.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interpolate::POLYNOMIAL_DATA_THRESHOLD;
use crate::linalg::{norm2, Matrix};
use crate::posterior::{PosteriorDensity, Preconditioner};
use crate::scalar::Scalar;

/// Relative threshold on pole medians.
pub const POLE_RATIO: f64 = 1e-3;
/// Split-R̂ above this is flagged.
pub const RHAT_FLAG: f64 = 1.1;
/// Energy error counted as a divergence.
pub const DIVERGENCE_ENERGY: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Draws per chain, burn-in included.
    pub samples_per_chain: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub leapfrog_steps: usize,
    pub target_accept: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { chains: 2, samples_per_chain: 1000, burn_in: 500, seed: 0, leapfrog_steps: 32, target_accept: 0.8 }
    }
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidConfig("need at least one chain".into()));
        }
        if self.burn_in >= self.samples_per_chain {
            return Err(Error::InvalidConfig(format!(
                "burn-in ({}) must be smaller than samples per chain ({})",
                self.burn_in, self.samples_per_chain
            )));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::InvalidConfig("leapfrog steps must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig(format!("target acceptance must lie in (0, 1), got {}", self.target_accept)));
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        self.samples_per_chain - self.burn_in
    }
}

/// Unnormalized log density with gradient.
pub trait LogDensity<T>: Sync {
    fn dim(&self) -> usize;
    fn value_grad(&self, x: &[T]) -> Result<(T, Vec<T>)>;
}

/// [`LogDensity`] from a closure.
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T, F> LogDensity<T> for FnDensity<F>
where
    F: Fn(&[T]) -> Result<(T, Vec<T>)> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_grad(&self, x: &[T]) -> Result<(T, Vec<T>)> {
        (self.f)(x)
    }
}

struct Centered<'a, T>(&'a PosteriorDensity<T>);

impl<T: Scalar> LogDensity<T> for Centered<'_, T> {
    fn dim(&self) -> usize {
        self.0.state_dim()
    }

    fn value_grad(&self, x: &[T]) -> Result<(T, Vec<T>)> {
        Ok((self.0.log_posterior(x)?, self.0.log_posterior_grad(x)?))
    }
}

struct NonCenteredTarget<'a, T>(crate::posterior::NonCentered<'a, T>);

impl<T: Scalar> LogDensity<T> for NonCenteredTarget<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value_grad(&self, x: &[T]) -> Result<(T, Vec<T>)> {
        self.0.value_grad(x)
    }
}

/// Draws and diagnostics of one chain, in the target's own coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput<T> {
    pub draws: Vec<Vec<T>>,
    pub log_density: Vec<T>,
    pub accepted: usize,
    pub divergent: usize,
    pub step_size: T,
}

impl<T> ChainOutput<T> {
    pub fn acceptance_rate(&self) -> f64 {
        if self.draws.is_empty() {
            0.0
        } else {
            self.accepted as f64 / self.draws.len() as f64
        }
    }
}

struct Whitened<'a, T, D: ?Sized> {
    target: &'a D,
    center: &'a [T],
    pre: &'a Preconditioner<T>,
}

impl<T: Scalar, D: LogDensity<T> + ?Sized> Whitened<'_, T, D> {
    fn to_x(&self, z: &[T]) -> Vec<T> {
        self.pre.unwhiten(z).into_iter().zip(self.center).map(|(d, &c)| c + d).collect()
    }

    /// Log density and whitened gradient. A value of `−∞` with a finite
    /// gradient is allowed: trajectories may cross zero-density regions and
    /// only the endpoint decides acceptance.
    fn eval(&self, z: &[T]) -> Option<(T, Vec<T>)> {
        let (v, g) = self.target.value_grad(&self.to_x(z)).ok()?;
        if v.is_nan() || v == T::infinity() || g.iter().any(|x| !x.is_finite()) {
            return None;
        }
        Some((v, self.pre.whiten_grad(&g)))
    }
}

struct Proposal<T> {
    z: Vec<T>,
    logp: T,
    grad: Vec<T>,
    /// `exp(−ΔH)` capped at 1; 0 when the trajectory left the domain.
    accept_prob: f64,
    energy_error: f64,
}

fn leapfrog<T: Scalar, D: LogDensity<T> + ?Sized>(
    w: &Whitened<'_, T, D>,
    z0: &[T],
    logp0: T,
    grad0: &[T],
    p0: &[T],
    eps: T,
    steps: usize,
) -> Option<Proposal<T>> {
    let half = eps * T::lit(0.5);
    let mut z = z0.to_vec();
    let mut p: Vec<T> = p0.iter().zip(grad0).map(|(&p, &g)| p + half * g).collect();
    let mut logp = logp0;
    let mut grad = grad0.to_vec();
    for step in 0..steps {
        z.iter_mut().zip(&p).for_each(|(zi, &pi)| *zi += eps * pi);
        let (v, g) = w.eval(&z)?;
        logp = v;
        grad = g;
        let k = if step + 1 == steps { half } else { eps };
        p.iter_mut().zip(&grad).for_each(|(pi, &gi)| *pi += k * gi);
    }
    let kin0: T = p0.iter().map(|&v| v * v).sum::<T>() * T::lit(0.5);
    let kin1: T = p.iter().map(|&v| v * v).sum::<T>() * T::lit(0.5);
    let dh = ((-logp + kin1) - (-logp0 + kin0)).to_f64_lossy();
    if !dh.is_finite() {
        return None;
    }
    Some(Proposal { z, logp, grad, accept_prob: (-dh).exp().min(1.0), energy_error: dh })
}

fn normal_vec<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// Doubles or halves a unit step until one leapfrog step crosses 50%
/// acceptance.
fn initial_step<T: Scalar, D: LogDensity<T> + ?Sized>(
    w: &Whitened<'_, T, D>,
    z: &[T],
    logp: T,
    grad: &[T],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut eps = 1.0f64;
    let p = normal_vec::<T>(rng, z.len());
    let prob = |e: f64| leapfrog(w, z, logp, grad, &p, T::lit(e), 1).map_or(0.0, |pr| pr.accept_prob);
    let up = prob(eps) > 0.5;
    for _ in 0..40 {
        let a = prob(eps);
        if up != (a > 0.5) {
            break;
        }
        eps = if up { eps * 2.0 } else { eps / 2.0 };
    }
    eps.clamp(1e-6, 10.0)
}

/// Runs one HMC chain on `target`, started at `start`, whitened by `pre`
/// around `center`. Returns the kept draws in target coordinates.
pub fn run_chain<T: Scalar, D: LogDensity<T> + ?Sized>(
    target: &D,
    center: &[T],
    start: &[T],
    pre: &Preconditioner<T>,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ChainOutput<T>> {
    let w = Whitened { target, center, pre };
    let offset: Vec<T> = start.iter().zip(center).map(|(&s, &c)| s - c).collect();
    let mut z = pre.whiten(&offset);
    let (mut logp, mut grad) = w
        .eval(&z)
        .filter(|(v, _)| v.is_finite())
        .ok_or_else(|| Error::DomainError("log density undefined at the starting point".into()))?;

    let mut eps = initial_step(&w, &z, logp, &grad, rng);
    let mut mu = (10.0 * eps).ln();
    let (gamma, t0, kappa) = (0.05, 10.0, 0.75);
    let mut h_bar = 0.0f64;
    let mut log_eps_bar = 0.0f64;
    // dual averaging restarts halfway through burn-in, so the final step
    // size forgets the transient from the starting point
    let restart = config.burn_in / 2;
    let mut m = 0.0f64;

    let kept = config.kept_per_chain();
    let mut out = ChainOutput {
        draws: Vec::with_capacity(kept),
        log_density: Vec::with_capacity(kept),
        accepted: 0,
        divergent: 0,
        step_size: T::lit(eps),
    };
    for it in 0..config.samples_per_chain {
        let jitter = rng.random_range(0.8..1.2);
        let p = normal_vec::<T>(rng, z.len());
        let prop = leapfrog(&w, &z, logp, &grad, &p, T::lit(eps * jitter), config.leapfrog_steps);
        let (alpha, energy) = prop.as_ref().map_or((0.0, f64::INFINITY), |p| (p.accept_prob, p.energy_error));
        let u: f64 = rng.random();
        let accept = u < alpha;
        if accept {
            let prop = prop.expect("accepted proposals exist");
            z = prop.z;
            logp = prop.logp;
            grad = prop.grad;
        }
        if it < config.burn_in {
            if it == restart && restart > 0 {
                mu = (10.0 * log_eps_bar.exp()).ln();
                h_bar = 0.0;
                log_eps_bar = 0.0;
                m = 0.0;
            }
            m += 1.0;
            h_bar = (1.0 - 1.0 / (m + t0)) * h_bar + (config.target_accept - alpha) / (m + t0);
            let log_eps = mu - m.sqrt() / gamma * h_bar;
            let weight = m.powf(-kappa);
            log_eps_bar = weight * log_eps + (1.0 - weight) * log_eps_bar;
            eps = log_eps.exp();
            if it + 1 == config.burn_in {
                eps = log_eps_bar.exp();
            }
        } else {
            out.accepted += usize::from(accept);
            if !accept && energy > DIVERGENCE_ENERGY {
                out.divergent += 1;
            }
            out.draws.push(w.to_x(&z));
            out.log_density.push(logp);
        }
    }
    out.step_size = T::lit(eps);
    Ok(out)
}

/// Independent per-chain generator: stream `chain` of the master seed.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Runs `config.chains` chains (in parallel when a thread pool is
/// available). Output order is chain order.
pub fn run_chains<T: Scalar, D: LogDensity<T>>(
    target: &D,
    center: &[T],
    starts: &[Vec<T>],
    pre: &Preconditioner<T>,
    config: &SamplerConfig,
) -> Result<Vec<ChainOutput<T>>> {
    config.validate()?;
    (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = chain_rng(config.seed, c);
            run_chain(target, center, &starts[c % starts.len()], pre, config, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Normal,
    NullspacePole,
    InterpolationPole,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Normal => "normal",
            Regime::NullspacePole => "nullspace-pole",
            Regime::InterpolationPole => "interpolation-pole",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Regime::Normal, Regime::NullspacePole, Regime::InterpolationPole].into_iter().find(|r| r.as_str() == s)
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub acceptance: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub divergent: usize,
    /// Largest split-chain R̂ over all state coordinates.
    pub max_rhat: f64,
    /// Laplace factorization failed and a diagonal preconditioner was used.
    pub diagonal_fallback: bool,
}

impl Diagnostics {
    pub fn rhat_flagged(&self) -> bool {
        self.max_rhat > RHAT_FLAG
    }
}

/// Pooled posterior draws and their moments in subspace coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionPosterior<T> {
    /// Kept draws of `h*`, chain after chain.
    pub samples: Matrix<T>,
    pub h_hat: Vec<T>,
    pub sigma_hat: Matrix<T>,
    pub sigma_y_samples: Option<Vec<T>>,
    /// Centered log posterior of each kept draw.
    pub log_density: Vec<T>,
    pub chain_len: usize,
    pub regime: Regime,
    pub diagnostics: Diagnostics,
}

impl<T: Scalar> RegressionPosterior<T> {
    /// Posterior with no draws, used when a pole is found before sampling.
    fn degenerate(regime: Regime, h: Vec<T>, noise: Option<T>) -> Self {
        let n = h.len();
        Self {
            samples: Matrix::zeros(0, n),
            h_hat: h,
            sigma_hat: Matrix::zeros(n, n),
            sigma_y_samples: noise.map(|s| vec![s]),
            log_density: Vec::new(),
            chain_len: 0,
            regime,
            diagnostics: Diagnostics::default(),
        }
    }

    /// Median of the `σ_y` draws.
    pub fn sigma_y_median(&self) -> Option<T> {
        self.sigma_y_samples.as_deref().filter(|s| !s.is_empty()).map(median)
    }

    pub fn sigma_y_quantile(&self, q: f64) -> Option<T> {
        self.sigma_y_samples.as_deref().filter(|s| !s.is_empty()).map(|s| quantile(s, q))
    }

    /// Writes one CSV row per kept draw: state entries, `log_sigma_y` when
    /// sampled, the log posterior, and the chain index.
    pub fn write_trace<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.samples.cols();
        let mut header: Vec<String> = (0..n).map(|i| format!("h{i}")).collect();
        if self.sigma_y_samples.is_some() {
            header.push("log_sigma_y".into());
        }
        header.extend(["log_posterior".into(), "chain".into()]);
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.samples.rows() {
            let mut rec: Vec<String> = self.samples.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(s) = &self.sigma_y_samples {
                rec.push(s[i].ln().to_string());
            }
            rec.push(self.log_density[i].to_string());
            rec.push((i / self.chain_len.max(1)).to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub(crate) fn median<T: Scalar>(v: &[T]) -> T {
    quantile(v, 0.5)
}

/// Linear-interpolation quantile.
pub(crate) fn quantile<T: Scalar>(v: &[T], q: f64) -> T {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::lit(pos - lo as f64);
    s[lo] + (s[hi] - s[lo]) * frac
}

/// Mean and `1/N`-normalized covariance of the rows of `samples`.
pub fn posterior_moments<T: Scalar>(samples: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let (m, n) = (samples.rows(), samples.cols());
    if m < 2 {
        return Err(Error::TooFewSamples(m));
    }
    let inv = T::one() / T::from_usize_lossy(m);
    let mut mean = vec![T::zero(); n];
    for i in 0..m {
        mean.iter_mut().zip(samples.row(i)).for_each(|(a, &v)| *a += v);
    }
    mean.iter_mut().for_each(|v| *v *= inv);
    let mut cov = Matrix::zeros(n, n);
    for i in 0..m {
        let d: Vec<T> = samples.row(i).iter().zip(&mean).map(|(&v, &mu)| v - mu).collect();
        for a in 0..n {
            for b in a..n {
                cov[(a, b)] += d[a] * d[b];
            }
        }
    }
    for a in 0..n {
        for b in a..n {
            let v = cov[(a, b)] * inv;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok((mean, cov))
}

/// Split-chain potential scale reduction for one scalar quantity.
pub fn split_rhat<T: Scalar>(chains: &[Vec<T>]) -> f64 {
    let halves: Vec<Vec<f64>> = chains
        .iter()
        .flat_map(|c| {
            let n = c.len() / 2;
            let v: Vec<f64> = c.iter().map(|x| x.to_f64_lossy()).collect();
            [v[..n].to_vec(), v[c.len() - n..].to_vec()]
        })
        .collect();
    let n = halves.first().map_or(0, Vec::len);
    let m = halves.len();
    if n < 2 || m < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n as f64).collect();
    let within: f64 = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1) as f64)
        .sum::<f64>()
        / m as f64;
    let grand = means.iter().sum::<f64>() / m as f64;
    let between = n as f64 * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m - 1) as f64;
    if within <= 0.0 {
        return if between <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1) as f64 / n as f64 * within + between / n as f64;
    (var_plus / within).sqrt()
}

/// Effective sample size of one trace, from Geyer's initial monotone
/// sequence of autocorrelation pair sums.
pub fn effective_sample_size<T: Scalar>(trace: &[T]) -> f64 {
    let n = trace.len();
    if n < 4 {
        return n as f64;
    }
    let x: Vec<f64> = trace.iter().map(|v| v.to_f64_lossy()).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| {
        (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (n as f64 * var)
    };
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    n as f64 / tau.max(1.0 / n as f64)
}

/// Classifies per-chain traces of `‖h‖` and `σ_y`, judged on the medians
/// over the last quarter of each chain.
pub fn detect_poles<T: Scalar>(norm_traces: &[Vec<T>], sigma_traces: Option<&[Vec<T>]>, h_mu_norm: T, y_sd: T) -> Regime {
    let tail = |traces: &[Vec<T>]| -> Option<T> {
        let pooled: Vec<T> = traces.iter().flat_map(|t| t[t.len() - t.len().div_ceil(4)..].iter().copied()).collect();
        (!pooled.is_empty()).then(|| median(&pooled))
    };
    let ratio = T::lit(POLE_RATIO);
    if tail(norm_traces).is_some_and(|m| m < ratio * h_mu_norm) {
        return Regime::NullspacePole;
    }
    if let Some(s) = sigma_traces {
        if tail(s).is_some_and(|m| m < ratio * y_sd) {
            return Regime::InterpolationPole;
        }
    }
    Regime::Normal
}

fn std_dev<T: Scalar>(y: &[T]) -> T {
    let n = T::from_usize_lossy(y.len());
    let mean = y.iter().copied().sum::<T>() / n;
    (y.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n).sqrt()
}

/// Negative-definite curvature of `target` at `x` by central differences of
/// the gradient.
fn fd_hessian<T: Scalar, D: LogDensity<T>>(target: &D, x: &[T]) -> Result<Matrix<T>> {
    let n = x.len();
    let mut h = Matrix::zeros(n, n);
    for j in 0..n {
        let step = T::lit(1e-5) * (T::one() + x[j].abs());
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[j] += step;
        m[j] -= step;
        let gp = target.value_grad(&p)?.1;
        let gm = target.value_grad(&m)?.1;
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (step + step);
        }
    }
    h.symmetrize();
    Ok(h)
}

/// Samples the regression posterior and classifies its regime.
///
/// Known noise is sampled in `h*` directly. Unknown noise is sampled in
/// standardized residuals `(r, log σ_y)`, see
/// [`crate::posterior::NonCentered`].
pub fn run_mcmc<T: Scalar>(density: &PosteriorDensity<T>, config: &SamplerConfig) -> Result<RegressionPosterior<T>> {
    config.validate()?;
    let n = density.n();
    let nh = density.nh();
    let y = density.y();
    let ysq: T = y.iter().map(|&v| v * v).sum();
    let h_mu_norm = density.h_mu_norm();
    let noise0 = density.initial_noise();
    if density.includes_prior() && h_mu_norm * h_mu_norm <= T::lit(POLYNOMIAL_DATA_THRESHOLD) * ysq {
        return Ok(RegressionPosterior::degenerate(Regime::NullspacePole, vec![T::zero(); n], noise0));
    }
    let map = match density.map_estimate(T::lit(1e-10), 200) {
        Ok(m) => m,
        Err(Error::PoleCollapse { .. }) => {
            let mut h = density.h_mu().to_vec();
            h[..nh].iter_mut().for_each(|v| *v = T::zero());
            return Ok(RegressionPosterior::degenerate(Regime::NullspacePole, h, noise0));
        }
        Err(Error::NoConvergence { .. }) => density.h_mu().to_vec(),
        Err(e) => return Err(e),
    };

    let (chains, fallback) = if let Some(s0) = noise0 {
        let nc = density.non_centered()?;
        let target = NonCenteredTarget(nc);
        let mut centered = map.clone();
        centered.push(s0.ln());
        let start = nc.from_centered(&centered);
        let pre = Preconditioner::from_hessian(&fd_hessian(&target, &start)?);
        let fallback = pre.is_fallback();
        let raw = run_chains(&target, &start, std::slice::from_ref(&start), &pre, config)?;
        let mapped = raw
            .into_iter()
            .map(|mut c| {
                c.draws = c.draws.iter().map(|d| nc.to_centered(d)).collect();
                c
            })
            .collect::<Vec<_>>();
        (mapped, fallback)
    } else {
        let pre = Preconditioner::from_hessian(&density.hessian(&map)?);
        let fallback = pre.is_fallback();
        (run_chains(&Centered(density), &map, std::slice::from_ref(&map), &pre, config)?, fallback)
    };

    let kept = config.kept_per_chain();
    let dim = density.state_dim();
    let mut samples = Matrix::zeros(kept * chains.len(), n);
    let mut sigma = noise0.map(|_| Vec::with_capacity(kept * chains.len()));
    let mut log_density = Vec::with_capacity(kept * chains.len());
    let mut norm_traces = Vec::with_capacity(chains.len());
    let mut sigma_traces = Vec::with_capacity(chains.len());
    for (c, chain) in chains.iter().enumerate() {
        let mut norms = Vec::with_capacity(kept);
        let mut sig = Vec::with_capacity(kept);
        for (i, d) in chain.draws.iter().enumerate() {
            samples.row_mut(c * kept + i).copy_from_slice(&d[..n]);
            norms.push(norm2(&d[..nh]));
            if let Some(s) = sigma.as_mut() {
                s.push(d[n].exp());
                sig.push(d[n].exp());
            }
            // non-centered chains drop the −N log σ_y term through their Jacobian
            let lp = chain.log_density[i];
            log_density.push(if noise0.is_some() { lp - T::from_usize_lossy(n) * d[n] } else { lp });
        }
        norm_traces.push(norms);
        sigma_traces.push(sig);
    }
    let regime = detect_poles(
        &norm_traces,
        sigma.as_ref().map(|_| sigma_traces.as_slice()),
        h_mu_norm,
        std_dev(y),
    );

    let divergent: usize = chains.iter().map(|c| c.divergent).sum();
    let total = kept * chains.len();
    if regime == Regime::Normal && 2 * divergent > total {
        return Err(Error::DivergentChains { rejected: divergent, total });
    }

    let max_rhat = (0..dim)
        .map(|j| {
            let per: Vec<Vec<T>> = chains.iter().map(|c| c.draws.iter().map(|d| d[j]).collect()).collect();
            split_rhat(&per)
        })
        .filter(|r| !r.is_nan())
        .fold(f64::NAN, f64::max);
    let (h_hat, sigma_hat) = posterior_moments(&samples)?;
    Ok(RegressionPosterior {
        samples,
        h_hat,
        sigma_hat,
        sigma_y_samples: sigma,
        log_density,
        chain_len: kept,
        regime,
        diagnostics: Diagnostics {
            acceptance: chains.iter().map(ChainOutput::acceptance_rate).collect(),
            step_sizes: chains.iter().map(|c| c.step_size.to_f64_lossy()).collect(),
            divergent,
            max_rhat,
            diagonal_fallback: fallback,
        },
    })
}
