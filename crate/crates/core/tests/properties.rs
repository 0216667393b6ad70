//! Invariants checked on random inputs.

use proptest::prelude::*;

use sipr::basis::SubspaceBasis;
use sipr::data::{kfold_indices, minmax_scale, Dataset};
use sipr::interpolate::{solve_interpolation, InterpolationPosterior};
use sipr::linalg::{dot, norm2, Matrix};
use sipr::posterior::{NoiseModel, PosteriorDensity};
use sipr::predict::CredibleBand;
use sipr::{Error, Eta};

const ETAS: [f64; 4] = [0.5, 1.01, 1.5, 2.5];

/// Sorted, well separated 1-D inputs.
fn line_points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..1.0, n).prop_map(|gaps| {
        gaps.iter()
            .scan(0.0, |acc, g| {
                *acc += g;
                Some(*acc)
            })
            .collect()
    })
}

fn plane_points(n: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| [a, b]), n)
        .prop_filter("points too close", |p| {
            (0..p.len()).all(|i| (0..i).all(|j| (p[i][0] - p[j][0]).hypot(p[i][1] - p[j][1]) > 0.05))
        })
}

fn column(xs: &[f64]) -> Matrix<f64> {
    Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap()
}

fn plane(p: &[[f64; 2]]) -> Matrix<f64> {
    Matrix::from_rows(&p.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn close(a: f64, b: f64, tol: f64, scale: f64) -> bool {
    (a - b).abs() <= tol * scale.max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolation_commutes_with_affine_maps_of_a_line(
        xs in line_points(5..12),
        ys in prop::collection::vec(-2.0f64..2.0, 12),
        eta_i in 0usize..4,
        scale in 0.01f64..100.0,
        flip in any::<bool>(),
        shift in -50.0f64..50.0,
        alpha in 0.1f64..10.0,
        beta in -5.0f64..5.0,
        probe in 0.0f64..1.0,
    ) {
        let eta = Eta::new(ETAS[eta_i]).unwrap();
        let y = &ys[..xs.len()];
        let s = if flip { -scale } else { scale };
        let xt = xs[0] + probe * (xs[xs.len() - 1] - xs[0]) + 0.013;
        let f = solve_interpolation(&column(&xs), y, eta).unwrap();
        let xs2: Vec<f64> = xs.iter().map(|v| s * v + shift).collect();
        let y2: Vec<f64> = y.iter().map(|v| alpha * v + beta).collect();
        let g = solve_interpolation(&column(&xs2), &y2, eta).unwrap();
        let lhs = g.evaluate(&[s * xt + shift]).unwrap();
        let rhs = alpha * f.evaluate(&[xt]).unwrap() + beta;
        prop_assert!(close(lhs, rhs, 1e-7, alpha * 2.0 + beta.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn interpolation_commutes_with_planar_rotation(
        p in plane_points(8),
        ys in prop::collection::vec(-1.0f64..1.0, 8),
        theta in 0.0f64..std::f64::consts::TAU,
        t in (0.2f64..0.8, 0.2f64..0.8),
    ) {
        let eta = Eta::new(1.5).unwrap();
        let (c, s) = (theta.cos(), theta.sin());
        let rot = |v: [f64; 2]| [c * v[0] - s * v[1] + 3.0, s * v[0] + c * v[1] - 1.0];
        let q: Vec<[f64; 2]> = p.iter().map(|&v| rot(v)).collect();
        let f = solve_interpolation(&plane(&p), &ys, eta).unwrap();
        let g = solve_interpolation(&plane(&q), &ys, eta).unwrap();
        let probe = [t.0, t.1];
        let lhs = g.evaluate(&rot(probe)).unwrap();
        let rhs = f.evaluate(&probe).unwrap();
        prop_assert!(close(lhs, rhs, 1e-7, 1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn data_order_does_not_matter(
        xs in line_points(6..10),
        ys in prop::collection::vec(-1.0f64..1.0, 10),
        perm_seed in any::<u64>(),
        eta_i in 0usize..4,
        probe in 0.05f64..0.95,
    ) {
        let eta = Eta::new(ETAS[eta_i]).unwrap();
        let n = xs.len();
        let y = &ys[..n];
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates driven by a simple LCG
        let mut state = perm_seed | 1;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let xp: Vec<f64> = order.iter().map(|&i| xs[i]).collect();
        let yp: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let xt = [xs[0] + probe * (xs[n - 1] - xs[0]) + 0.007];

        let a = InterpolationPosterior::new(&column(&xs), y, eta).unwrap();
        let b = InterpolationPosterior::new(&column(&xp), &yp, eta).unwrap();
        prop_assert_eq!(a.is_polynomial(), b.is_polynomial());
        prop_assume!(!a.is_polynomial());
        let (pa, pb) = (a.pointwise(&xt).unwrap(), b.pointwise(&xt).unwrap());
        prop_assert!(close(pa.mean, pb.mean, 1e-8, 1.0));
        // near-polynomial data make the scale tiny; compare on the data scale
        prop_assert!((pa.scale - pb.scale).abs() <= 1e-6 * pa.scale + 1e-9, "{} vs {}", pa.scale, pb.scale);

        let ba = SubspaceBasis::new(&column(&xs), eta).unwrap();
        let bb = SubspaceBasis::new(&column(&xp), eta).unwrap();
        let ea = dot(&ba.eval_functional(&xt).unwrap(), &ba.coordinates(y).unwrap());
        let eb = dot(&bb.eval_functional(&xt).unwrap(), &bb.coordinates(&yp).unwrap());
        prop_assert!(close(ea, eb, 1e-8, 1.0), "{ea} vs {eb}");
        // the η-norm of the data is a property of the set, not the order
        let (na, nb) = (norm2(&ba.coordinates(y).unwrap()[..ba.nh()]), norm2(&bb.coordinates(&yp).unwrap()[..bb.nh()]));
        prop_assert!(close(na, nb, 1e-7, na));
    }

    #[test]
    fn basis_is_orthonormal_and_constrained(
        n in 4usize..=50,
        dim in 1usize..4,
        eta_i in 0usize..4,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let eta = Eta::new(ETAS[eta_i]).unwrap();
        use rand::seq::SliceRandom;
        // Latin hypercube: one point per stratum on every axis
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x = Matrix::zeros(n, dim);
        for j in 0..dim {
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(&mut rng);
            for (i, &k) in strata.iter().enumerate() {
                x[(i, j)] = (k as f64 + rng.random_range(0.1..0.9)) / n as f64;
            }
        }
        match SubspaceBasis::<f64>::new(&x, eta) {
            Ok(b) => {
                let k = b.system().kernels();
                let gram = b.h().transpose().matmul(&k.g.matmul(b.h())).scale(b.system().norm_constant());
                let err = gram.sub(&Matrix::identity(b.nh())).max_abs();
                prop_assert!(err < 1e-6, "gram error {err}");
                // columns grow large when two points nearly coincide
                let mh = k.m.matmul(b.h()).max_abs();
                prop_assert!(mh < 1e-12 * n as f64 * b.h().max_abs().max(1.0), "constraint residual {mh}");
            }
            Err(Error::TooFewPoints { .. }) => prop_assert!(n <= sipr::geometry::nullspace_dim(dim, eta)),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn polynomials_below_the_regularity_are_reproduced(
        p in plane_points(10),
        coef in prop::collection::vec(-3.0f64..3.0, 6),
        t in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        // η = 2.5 in two dimensions: all quadratics lie in the nullspace
        let poly = |v: &[f64]| {
            coef[0] + coef[1] * v[0] + coef[2] * v[1] + coef[3] * v[0] * v[0] + coef[4] * v[0] * v[1] + coef[5] * v[1] * v[1]
        };
        let y: Vec<f64> = p.iter().map(|v| poly(v)).collect();
        let f = solve_interpolation(&plane(&p), &y, Eta::new(2.5).unwrap()).unwrap();
        let scale = coef.iter().map(|c| c.abs()).sum::<f64>();
        prop_assert!(f.frame_a().iter().all(|a| a.abs() < 1e-8 * scale.max(1.0)));
        let probe = [t.0, t.1];
        prop_assert!(close(f.evaluate(&probe).unwrap(), poly(&probe), 1e-8, scale.max(1.0)));
    }

    #[test]
    fn gradient_matches_finite_differences(
        xs in line_points(5..9),
        ys in prop::collection::vec(-1.0f64..1.0, 9),
        sigma in 0.05f64..0.5,
        offset in prop::collection::vec(-0.5f64..0.5, 10),
        unknown in any::<bool>(),
    ) {
        let n = xs.len();
        let basis = SubspaceBasis::new(&column(&xs), Eta::new(1.5).unwrap()).unwrap();
        let noise = if unknown { NoiseModel::unknown() } else { NoiseModel::homoscedastic(sigma, n) };
        let d = PosteriorDensity::new(basis, &ys[..n], noise).unwrap();
        let mut state: Vec<f64> = d.h_mu().iter().zip(&offset).map(|(h, o)| h + 0.3 * o * (1.0 + h.abs())).collect();
        if unknown {
            state.push(sigma.ln());
        }
        prop_assume!(norm2(&state[..d.nh()]) > 1e-3);
        let g = d.log_posterior_grad(&state).unwrap();
        for i in 0..state.len() {
            let h = 1e-6 * (1.0 + state[i].abs());
            let (mut up, mut dn) = (state.clone(), state.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (d.log_posterior(&up).unwrap() - d.log_posterior(&dn).unwrap()) / (2.0 * h);
            prop_assert!(close(g[i], fd, 1e-5, g[i].abs().max(1.0)), "component {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn prior_is_scale_invariant(
        xs in line_points(5..9),
        ys in prop::collection::vec(-1.0f64..1.0, 9),
        lambda in 0.01f64..100.0,
    ) {
        // log p(λh) − log p(h) = −N_h ln λ plus the change of the Gaussian term
        let n = xs.len();
        let basis = SubspaceBasis::new(&column(&xs), Eta::new(0.5).unwrap()).unwrap();
        let d = PosteriorDensity::new(basis, &ys[..n], NoiseModel::homoscedastic(0.3, n)).unwrap();
        let h: Vec<f64> = d.h_mu().iter().map(|v| v + 0.1).collect();
        let hl: Vec<f64> = h.iter().map(|v| lambda * v).collect();
        let quad = |s: &[f64]| {
            let r: Vec<f64> = s.iter().zip(d.h_mu()).map(|(a, b)| a - b).collect();
            -0.5 * d.precision().quad_form(&r)
        };
        let lhs = d.log_posterior(&hl).unwrap() - d.log_posterior(&h).unwrap();
        let rhs = -(d.nh() as f64) * lambda.ln() + quad(&hl) - quad(&h);
        prop_assert!(close(lhs, rhs, 1e-9, rhs.abs().max(1.0)), "{lhs} vs {rhs}");
    }

    #[test]
    fn map_shrinks_toward_the_nullspace(
        xs in line_points(5..10),
        ys in prop::collection::vec(-1.0f64..1.0, 10),
        sigma in 0.02f64..0.5,
    ) {
        let n = xs.len();
        let basis = SubspaceBasis::new(&column(&xs), Eta::new(1.5).unwrap()).unwrap();
        let d = PosteriorDensity::new(basis, &ys[..n], NoiseModel::homoscedastic(sigma, n)).unwrap();
        match d.map_estimate(1e-9, 5000) {
            Ok(h) => prop_assert!(norm2(&h[..d.nh()]) <= norm2(&d.h_mu()[..d.nh()]) * (1.0 + 1e-12)),
            Err(e) => prop_assert!(matches!(e, Error::PoleCollapse { .. }), "unexpected {e}"),
        }
    }

    #[test]
    fn kfold_partitions_the_rows(n in 2usize..60, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = kfold_indices(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0usize; n];
        for (train, test) in &folds {
            prop_assert_eq!(train.len() + test.len(), n);
            prop_assert!(test.len() == n / k || test.len() == n / k + 1);
            for &i in test {
                seen[i] += 1;
                prop_assert!(!train.contains(&i));
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn minmax_scaling_round_trips(
        rows in prop::collection::vec((-1e3f64..1e3, -1.0f64..1.0), 2..30),
    ) {
        let x = Matrix::from_rows(&rows.iter().map(|&(a, b)| vec![a, b]).collect::<Vec<_>>()).unwrap();
        let ds = Dataset::new(x.clone(), vec![0.0; rows.len()]).unwrap();
        match minmax_scale(&ds) {
            Ok(scaled) => {
                let s = scaled.scaling.as_ref().unwrap();
                for i in 0..rows.len() {
                    let u = scaled.x.row(i);
                    prop_assert!(u.iter().all(|v| (0.0..=1.0).contains(v)));
                    let back = s.invert(u);
                    for j in 0..2 {
                        prop_assert!(close(back[j], x[(i, j)], 1e-12, 1e3));
                    }
                }
                // scaling twice composes back to the original inputs
                let again = minmax_scale(&scaled).unwrap();
                let orig = again.original_x();
                prop_assert!(orig.sub(&x).max_abs() < 1e-9);
            }
            Err(Error::ConstantFeature(_)) => {}
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn bands_nest_and_add_in_quadrature(
        parts in prop::collection::vec((-5.0f64..5.0, 0.0f64..2.0, 0.0f64..2.0), 1..20),
        sigma_y in 0.0f64..1.0,
        dof in prop::option::of(1usize..50),
        level in 0.5f64..0.99,
    ) {
        let probes = vec![vec![0.0]; parts.len()];
        let band = CredibleBand::assemble(probes, parts.clone(), sigma_y, dof, level).unwrap();
        for (i, &(m, ss, st)) in parts.iter().enumerate() {
            prop_assert!(band.sigma_f[i] >= ss.max(st) - 1e-15);
            prop_assert!(band.sigma_d[i] >= band.sigma_f[i] - 1e-15);
            prop_assert!(close(band.sigma_f[i].powi(2), ss * ss + st * st, 1e-12, 1.0));
            prop_assert!(band.lower[i] <= m && m <= band.upper[i]);
            prop_assert!(close(band.upper[i] - m, m - band.lower[i], 1e-12, 1.0));
        }
    }
}
