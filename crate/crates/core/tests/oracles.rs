//! Independent reference implementations checked against the library.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sipr::basis::SubspaceBasis;
use sipr::geometry::{eta_norm_constant, greens_matrix, monomial_matrix, enumerate_multi_indices};
use sipr::interpolate::{solve_interpolation, SaddleSystem};
use sipr::linalg::{norm2, Matrix};
use sipr::posterior::Preconditioner;
use sipr::sampler::{effective_sample_size, posterior_moments, run_chains, run_mcmc, FnDensity, SamplerConfig};
use sipr::Eta;

mod common;

use common::{gaussian_density, mean_z, piecewise_linear, random_sorted, NaturalCubic};

fn eta(v: f64) -> Eta {
    Eta::new(v).unwrap()
}

#[test]
fn cubic_and_linear_kernels_match_classical_splines() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let xs = random_sorted(&mut rng, 20);
        let ys: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::from_vec(20, 1, xs.clone()).unwrap();
        let cubic = solve_interpolation(&x, &ys, eta(1.5)).unwrap();
        let linear = solve_interpolation(&x, &ys, eta(0.5)).unwrap();
        let oracle = NaturalCubic::new(&xs, &ys);
        for k in 1..100 {
            let t = xs[0] + (xs[19] - xs[0]) * k as f64 / 100.0;
            let want = oracle.eval(t);
            let got = cubic.evaluate(&[t]).unwrap();
            assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "cubic at {t}: {got} vs {want}");
            let lin = linear.evaluate(&[t]).unwrap();
            assert!((lin - piecewise_linear(&xs, &ys, t)).abs() < 1e-9);
        }
    }
}

/// Builds the orthonormal basis column by column from test functions on
/// growing prefixes of the data, normalizing each to unit η-norm.
fn iterative_basis(x: &Matrix<f64>, e: Eta, frame: &sipr::InputFrame<f64>) -> Matrix<f64> {
    let n = x.rows();
    let n0 = enumerate_multi_indices(x.cols(), e).len();
    let mut h = Matrix::zeros(n, n - n0);
    for j in 0..n - n0 {
        let p = n0 + j;
        let rows: Vec<Vec<f64>> = (0..p).map(|i| x.row(i).to_vec()).collect();
        let prefix = Matrix::from_rows(&rows).unwrap();
        let sys = SaddleSystem::with_frame(&prefix, e, frame.clone()).unwrap();
        let tf = sys.test_function(x.row(p)).unwrap();
        let norm = tf.frame_norm_sq().sqrt();
        let sign = if tf.a_t > 0.0 { 1.0 } else { -1.0 };
        for (i, v) in tf.a.iter().enumerate() {
            h[(i, j)] = sign * v / norm;
        }
        h[(p, j)] = sign * tf.a_t / norm;
    }
    h
}

#[test]
fn basis_matches_iterative_construction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (dim, e) in [(1, 1.5), (2, 1.5), (2, 0.5), (3, 2.5)] {
        let n = 14;
        let x = Matrix::from_fn(n, dim, |_, _| rng.random_range(0.0..4.0));
        let basis = SubspaceBasis::new(&x, eta(e)).unwrap();
        let oracle = iterative_basis(&x, eta(e), basis.frame());
        let diff = basis.h().sub(&oracle).max_abs();
        assert!(diff < 1e-6 * oracle.max_abs(), "D={dim} eta={e}: {diff}");
    }
}

#[test]
fn linear_kernel_norm_is_proportional_to_dirichlet_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ratios = Vec::new();
    for _ in 0..10 {
        let n = rng.random_range(3..15);
        let xs = random_sorted(&mut rng, n);
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Matrix::from_vec(n, 1, xs.clone()).unwrap();
        let model = solve_interpolation(&x, &ys, eta(0.5)).unwrap();
        let energy: f64 = (0..n - 1).map(|i| (ys[i + 1] - ys[i]).powi(2) / (xs[i + 1] - xs[i])).sum();
        ratios.push(model.eta_norm_sq() / energy);
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!((hi - lo) / lo < 1e-6, "{ratios:?}");
    assert!((lo - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
}

#[test]
fn constrained_quadratic_form_has_the_kernel_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (dim, e) in [(1, 0.5), (1, 1.5), (2, 1.5), (2, 2.5), (3, 0.5)] {
        let e = eta(e);
        let n = 10;
        let x = Matrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..1.0));
        let g = greens_matrix(&x, e).unwrap();
        let m = monomial_matrix(&x, &enumerate_multi_indices(dim, e));
        let mmt = sipr::linalg::Lu::new(&m.matmul(&m.transpose())).unwrap();
        for _ in 0..200 {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = mmt.solve(&m.matvec(&raw));
            let proj = m.tr_matvec(&w);
            let a: Vec<f64> = raw.iter().zip(&proj).map(|(r, p)| r - p).collect();
            assert!(e.sign() * g.quad_form(&a) > 0.0);
            assert!(eta_norm_constant(dim, e) * g.quad_form(&a) > 0.0);
        }
    }
}

#[test]
fn moments_match_two_pass_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = Matrix::from_fn(200, 4, |_, _| rng.random_range(-3.0..3.0));
    let (mean, cov) = posterior_moments(&draws).unwrap();
    for a in 0..4 {
        let col_a = draws.column(a);
        let mu_a = col_a.iter().sum::<f64>() / 200.0;
        assert!((mean[a] - mu_a).abs() < 1e-12);
        for b in 0..4 {
            let col_b = draws.column(b);
            let mu_b = col_b.iter().sum::<f64>() / 200.0;
            let c: f64 = col_a.iter().zip(&col_b).map(|(x, y)| (x - mu_a) * (y - mu_b)).sum::<f64>() / 200.0;
            assert!((cov[(a, b)] - c).abs() < 1e-12);
        }
    }
}

#[test]
fn hmc_recovers_gaussian_moments() {
    let d = gaussian_density();
    let cfg = SamplerConfig { samples_per_chain: 1500, burn_in: 500, ..SamplerConfig::default() };
    let post = run_mcmc(&d, &cfg).unwrap();
    assert_eq!(post.samples.rows(), 2000);
    let cov = sipr::linalg::Lu::new(d.precision()).unwrap().inverse();
    let z = mean_z(&post, d.h_mu(), &cov);
    assert!(z < 3.0, "mean off by {z} standard errors");
    let rel = post.sigma_hat.sub(&cov).frobenius_norm() / cov.frobenius_norm();
    assert!(rel < 0.1, "covariance error {rel}");
    assert_eq!(run_mcmc(&d, &cfg).unwrap(), post);
}

#[test]
fn hmc_marginals_converge_at_ten_thousand_draws() {
    let d = gaussian_density();
    let cfg = SamplerConfig { samples_per_chain: 5500, burn_in: 500, seed: 3, ..SamplerConfig::default() };
    let post = run_mcmc(&d, &cfg).unwrap();
    let cov = sipr::linalg::Lu::new(d.precision()).unwrap().inverse();
    for i in 0..2 {
        let sd = cov[(i, i)].sqrt();
        assert!((post.h_hat[i] - d.h_mu()[i]).abs() < 0.1 * sd, "mean {i}");
        assert!((post.sigma_hat[(i, i)] / cov[(i, i)] - 1.0).abs() < 0.1, "variance {i}");
    }
}

/// Kolmogorov distribution tail `P(K > λ)`.
fn kolmogorov_p(lambda: f64) -> f64 {
    let s: f64 = (1..100).map(|k| (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * lambda * lambda).exp()).sum();
    (2.0 * s).clamp(0.0, 1.0)
}

#[test]
fn hmc_samples_log_uniform_radius_on_a_shell() {
    // ‖x‖^{-3} in three dimensions on 1 < ‖x‖ < 10: ln‖x‖ is uniform
    let target = FnDensity::new(3, |x: &[f64]| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        // zero density off the shell, gradient continued analytically
        let v = if (1.0..100.0).contains(&r2) { -1.5 * r2.ln() } else { f64::NEG_INFINITY };
        Ok((v, x.iter().map(|v| -3.0 * v / r2).collect()))
    });
    let cfg = SamplerConfig { chains: 4, samples_per_chain: 6000, burn_in: 1000, ..SamplerConfig::default() };
    let start = vec![3.0, 0.0, 0.0];
    let pre = Preconditioner::Diagonal(vec![1.0; 3]);
    let chains = run_chains(&target, &[0.0; 3], &[start], &pre, &cfg).unwrap();
    // thin each chain by its autocorrelation time so the KS draws are
    // close to independent
    let mut u: Vec<f64> = Vec::new();
    for c in &chains {
        let t: Vec<f64> = c.draws.iter().map(|d| norm2(d).ln() / 10f64.ln()).collect();
        let thin = (t.len() as f64 / effective_sample_size(&t)).ceil() as usize;
        u.extend(t.iter().step_by(thin.max(1)));
    }
    assert!(u.len() > 500, "only {} effective draws", u.len());
    u.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max);
    let p = kolmogorov_p((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d);
    assert!(p > 0.01, "KS statistic {d}, p = {p}");
}
