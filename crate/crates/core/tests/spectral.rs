use std::f64::consts::PI;
use std::sync::Arc;

use couette_lab::grid::{hminus1_norm, solve_helmholtz, weighted_l2_norm, CVector, MaxAbs};
use couette_lab::operators::{
    assemble_mode_operator, compatibility_defect, compatibility_projection, velocity_from_vorticity,
    vorticity_from_velocity, FluidParams, OperatorKind,
};
use couette_lab::resolvent::{
    gearhart_pruss_gap, lambda_grid, resolvent_ratios, solve_resolvent, sweep_resolvent, temperature_operator,
};
use couette_lab::{ChebGrid, ModeField};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Chebyshev series value by the three-term recurrence.
fn cheb_eval(coef: &[f64], y: f64) -> f64 {
    let (mut t0, mut t1) = (1.0, y);
    let mut s = coef[0];
    if coef.len() > 1 {
        s += coef[1] * y;
    }
    for &a in &coef[2..] {
        let t2 = 2.0 * y * t1 - t0;
        s += a * t2;
        t0 = t1;
        t1 = t2;
    }
    s
}

/// Coefficients of the derivative of a Chebyshev series.
fn cheb_deriv(coef: &[f64]) -> Vec<f64> {
    let m = coef.len();
    if m < 2 {
        return vec![0.0];
    }
    let mut d = vec![0.0; m + 1];
    for j in (0..m - 1).rev() {
        d[j] = d[j + 2] + 2.0 * (j + 1) as f64 * coef[j + 1];
    }
    d[0] *= 0.5;
    d.truncate(m - 1);
    d
}

fn max_err(a: &CVector, b: &CVector) -> f64 {
    (a - b).max_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn d1_reproduces_polynomial_derivatives(
        n in 8usize..48,
        raw in prop::collection::vec(-1.0f64..1.0, 48),
    ) {
        let g = ChebGrid::new(n).unwrap();
        let coef = &raw[..n];
        let d = cheb_deriv(coef);
        let f = g.sample_real(|y| cheb_eval(coef, y));
        let exact = g.sample_real(|y| cheb_eval(&d, y));
        let err = max_err(&g.diff(&f), &exact);
        prop_assert!(err <= 1e-10 * exact.max_abs().max(1.0), "n = {n}, err = {err:e}");
    }

    #[test]
    fn weighted_norm_is_homogeneous_and_subadditive(
        a in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 24),
        b in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 24),
        s in -10.0f64..10.0,
    ) {
        let g = ChebGrid::new(24).unwrap();
        let f = ModeField::new(1, CVector::from_iterator(24, a.iter().map(|&(x, y)| Complex64::new(x, y))));
        let h = ModeField::new(1, CVector::from_iterator(24, b.iter().map(|&(x, y)| Complex64::new(x, y))));
        let wall = |y: f64| 1.0 - y.abs();
        for w in [None, Some(&wall as &dyn Fn(f64) -> f64)] {
            let nf = weighted_l2_norm(&g, &f, w).unwrap();
            let nh = weighted_l2_norm(&g, &h, w).unwrap();
            let ns = weighted_l2_norm(&g, &f.scaled(s), w).unwrap();
            let sum = ModeField::new(1, &f.values + &h.values);
            prop_assert!((ns - s.abs() * nf).abs() <= 1e-12 * (1.0 + ns));
            prop_assert!(weighted_l2_norm(&g, &sum, w).unwrap() <= nf + nh + 1e-12);
        }
    }

    #[test]
    fn helmholtz_solution_reproduces_its_right_hand_side(
        raw in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 40),
        k in 0i32..12,
        top in -1.0f64..1.0,
        bottom in -1.0f64..1.0,
    ) {
        let g = ChebGrid::new(40).unwrap();
        let rhs = ModeField::new(k, CVector::from_iterator(40, raw.iter().map(|&(x, y)| Complex64::new(x, y))));
        let u = solve_helmholtz(&g, k, &rhs, (c(top), c(bottom))).unwrap();
        let back = g.diff2(&u.values) - &u.values * c((k * k) as f64);
        let scale = rhs.values.max_abs();
        for i in 1..39 {
            prop_assert!((back[i] - rhs.values[i]).norm() <= 1e-8 * scale.max(1.0));
        }
        prop_assert!((u.values[0] - c(top)).norm() < 1e-12);
        prop_assert!((u.values[39] - c(bottom)).norm() < 1e-12);
    }

    #[test]
    fn projection_is_self_adjoint_and_contractive(
        a in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 32),
        b in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 32),
        k in 1i32..20,
    ) {
        let g = ChebGrid::new(32).unwrap();
        let f = ModeField::new(k, CVector::from_iterator(32, a.iter().map(|&(x, y)| Complex64::new(x, y))));
        let h = ModeField::new(k, CVector::from_iterator(32, b.iter().map(|&(x, y)| Complex64::new(x, y))));
        let pf = compatibility_projection(&g, k, &f).unwrap();
        let ph = compatibility_projection(&g, k, &h).unwrap();
        let lhs = g.inner(&pf.values, &h.values);
        let rhs = g.inner(&f.values, &ph.values);
        prop_assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + lhs.norm()));
        prop_assert!(g.l2(&pf.values) <= g.l2(&f.values) * (1.0 + 1e-12));
        let (p, m) = compatibility_defect(&g, k, &pf);
        prop_assert!(p < 1e-10 && m < 1e-10);
    }

    #[test]
    fn velocity_is_divergence_free_and_reproduces_vorticity(
        re in prop::collection::vec(-1.0f64..1.0, 12),
        im in prop::collection::vec(-1.0f64..1.0, 12),
        k in 1i32..10,
    ) {
        let g = ChebGrid::new(48).unwrap();
        let smooth = ModeField::new(k, g.sample(|y| Complex64::new(cheb_eval(&re, y), cheb_eval(&im, y))));
        let w = compatibility_projection(&g, k, &smooth).unwrap();
        let v = velocity_from_vorticity(&g, k, &w).unwrap();
        let div = &v.u1.values * Complex64::new(0.0, k as f64) + g.diff(&v.u2.values);
        let scale = v.u1.values.max_abs().max(v.u2.values.max_abs());
        prop_assert!(div.max_abs() <= 1e-10 * scale.max(1e-300) * 48.0);
        let back = vorticity_from_velocity(&g, k, &v.u1.values, &v.u2.values);
        for i in 1..47 {
            prop_assert!((back[i] - w.values[i]).norm() <= 1e-8 * w.values.max_abs());
        }
        prop_assert!(v.noslip_residual.0.max(v.noslip_residual.1) <= 1e-8 * scale.max(w.values.max_abs()));
    }

    #[test]
    fn hminus1_norm_is_dominated_by_l2(
        a in prop::collection::vec(-1.0f64..1.0, 128),
        n in prop::sample::select(vec![32usize, 64, 128]),
    ) {
        let g = ChebGrid::new(n).unwrap();
        let f = ModeField::new(1, CVector::from_iterator(n, a[..n].iter().map(|&x| c(x))));
        let h = hminus1_norm(&g, &f).unwrap();
        prop_assert!(h <= g.l2(&f.values) * (1.0 + 1e-10));
    }

    #[test]
    fn resolvent_ratios_are_scale_invariant(seed in 0u64..1000, k in 1i32..6) {
        let g = Arc::new(ChebGrid::new(48).unwrap());
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let f = ModeField::new(k, couette_lab::resolvent::random_forcing(&g, &mut rng));
        let base = resolvent_ratios(&g, k, 1e-2, 0.3, &f).unwrap();
        for s in [1e-3, 1e3] {
            let r = resolvent_ratios(&g, k, 1e-2, 0.3, &f.scaled(s)).unwrap();
            prop_assert!((r.ratio_l2 - base.ratio_l2).abs() <= 1e-10 * base.ratio_l2);
            prop_assert!((r.ratio_hm1 - base.ratio_hm1).abs() <= 1e-10 * base.ratio_hm1);
        }
    }
}

#[test]
fn clenshaw_curtis_integrates_even_monomials() {
    let g = ChebGrid::new(33).unwrap();
    for m in 0..16 {
        let f = g.sample_real(|y| y.powi(2 * m));
        let exact = 2.0 / (2 * m + 1) as f64;
        assert!((g.integrate(&f).re - exact).abs() < 1e-13, "degree {}", 2 * m);
    }
}

#[test]
fn d1_error_on_sine_shrinks_until_rounding() {
    let errs: Vec<f64> = [8usize, 12, 16]
        .iter()
        .map(|&n| {
            let g = ChebGrid::new(n).unwrap();
            let f = g.sample_real(|y| (PI * y).sin());
            max_err(&g.diff(&f), &g.sample_real(|y| PI * (PI * y).cos()))
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2]);
    assert!(errs[2] <= 1e-4);
    let g = ChebGrid::new(32).unwrap();
    let f = g.sample_real(|y| (PI * y).sin());
    assert!(max_err(&g.diff(&f), &g.sample_real(|y| PI * (PI * y).cos())) <= 1e-10);
}

#[test]
fn manufactured_helmholtz_cosh_at_n64() {
    let g = ChebGrid::new(64).unwrap();
    let rhs = ModeField::new(2, g.sample_real(|_| -4.0));
    let u = solve_helmholtz(&g, 2, &rhs, (c(0.0), c(0.0))).unwrap();
    let exact = g.sample_real(|y| 1.0 - (2.0 * y).cosh() / 2f64.cosh());
    assert!(max_err(&u.values, &exact) <= 1e-9);
}

#[test]
fn hminus1_norm_of_constant_matches_closed_form() {
    // (1 - d^2) w = 1, w(+-1) = 0 gives ||w||_{H1}^2 = int w = 2 - 2 tanh 1.
    let exact = (2.0 - 2.0 * 1f64.tanh()).sqrt();
    for n in [32usize, 64] {
        let g = ChebGrid::new(n).unwrap();
        let h = hminus1_norm(&g, &ModeField::new(0, g.sample_real(|_| 1.0))).unwrap();
        assert!((h - exact).abs() < 1e-10, "n = {n}: {h} vs {exact}");
    }
}

#[test]
fn operator_eigenvalue_of_pure_diffusion() {
    let g = Arc::new(ChebGrid::new(32).unwrap());
    let op = assemble_mode_operator(&g, 0, &FluidParams::new(1.0, 1.0).unwrap(), OperatorKind::Temperature);
    let a = op.interior_matrix().map(|z| z.re);
    let eig = a.eigenvalues().expect("real spectrum of pure diffusion");
    let smallest = eig.iter().copied().fold(f64::INFINITY, f64::min);
    assert!((smallest - PI * PI / 4.0).abs() < 1e-6);
}

#[test]
fn manufactured_velocity_recovery() {
    let g = ChebGrid::new(64).unwrap();
    let psi = |y: f64| (1.0 - y * y).powi(2);
    let w = g.sample_real(|y| 12.0 * y * y - 4.0 - psi(y));
    let v = velocity_from_vorticity(&g, 1, &ModeField::new(1, w)).unwrap();
    let u1 = g.sample_real(|y| -4.0 * y * (1.0 - y * y));
    assert!(max_err(&v.u1.values, &u1) <= 1e-8);
    assert!(v.noslip_residual.0.max(v.noslip_residual.1) <= 1e-8);
}

#[test]
fn incompatible_vorticity_reports_wall_slip() {
    // Oracle: u1(+-1) for w = e^{y}, k = 1, from a fine-grid solve.
    let fine = ChebGrid::new(256).unwrap();
    let oracle = velocity_from_vorticity(&fine, 1, &ModeField::new(1, fine.sample_real(f64::exp))).unwrap();
    let g = ChebGrid::new(48).unwrap();
    let v = velocity_from_vorticity(&g, 1, &ModeField::new(1, g.sample_real(f64::exp))).unwrap();
    assert!(v.noslip_residual.0 > 0.1 && v.noslip_residual.1 > 0.01);
    assert!((v.noslip_residual.0 - oracle.noslip_residual.0).abs() < 1e-10);
    assert!((v.noslip_residual.1 - oracle.noslip_residual.1).abs() < 1e-10);
}

#[test]
fn manufactured_resolvent_solve_at_n64() {
    let g = Arc::new(ChebGrid::new(64).unwrap());
    let (k, mu, lambda) = (3, 1e-3, 0.4);
    let op = temperature_operator(&g, k, mu).unwrap();
    let exact = g.sample_real(|y| 1.0 - y * y);
    let kf = k as f64;
    // F = -mu (d^2 - k^2) T + i k (y - lambda) T, evaluated analytically.
    let f = g.sample(|y| {
        let t = 1.0 - y * y;
        Complex64::new(-mu * (-2.0 - kf * kf * t), kf * (y - lambda) * t)
    });
    let sol = solve_resolvent(&op, lambda, &ModeField::new(k, f)).unwrap();
    assert!(max_err(&sol.values, &exact) <= 1e-9);
}

#[test]
fn resolvent_conjugation_and_reflection_symmetries() {
    let g = Arc::new(ChebGrid::new(48).unwrap());
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    let f = couette_lab::resolvent::random_forcing(&g, &mut rng);
    let (k, mu, lambda) = (2, 1e-2, 0.35);
    let base = solve_resolvent(&temperature_operator(&g, k, mu).unwrap(), lambda, &ModeField::new(k, f.clone())).unwrap();
    let conj = solve_resolvent(
        &temperature_operator(&g, -k, mu).unwrap(),
        lambda,
        &ModeField::new(-k, f.conjugate()),
    )
    .unwrap();
    assert!(max_err(&conj.values, &base.values.conjugate()) <= 1e-10 * base.values.max_abs());
    let n = g.n();
    let reflect = |v: &CVector| CVector::from_fn(n, |i, _| v[n - 1 - i].conj());
    let mirrored = solve_resolvent(
        &temperature_operator(&g, k, mu).unwrap(),
        -lambda,
        &ModeField::new(k, reflect(&f)),
    )
    .unwrap();
    assert!(max_err(&mirrored.values, &reflect(&base.values)) <= 1e-10 * base.values.max_abs());
}

#[test]
fn resolvent_ratio_survives_resolution_doubling() {
    let (k, mu) = (1, 1e-3);
    let ratio = |n: usize| {
        let g = Arc::new(ChebGrid::new(n).unwrap());
        let f = g.sample_real(|y| (1.0 - y * y) * (0.3 + y - 2.0 * y * y * y + (3.0 * y).sin()));
        let norm = g.l2(&f);
        resolvent_ratios(&g, k, mu, 0.0, &ModeField::new(k, f / c(norm))).unwrap().ratio_l2
    };
    let (coarse, fine) = (ratio(96), ratio(192));
    assert!((coarse - fine).abs() <= 1e-4 * fine, "{coarse} vs {fine}");
}

/// `min_lambda sigma_min` from a full SVD of the symmetrized interior block.
fn svd_gap(g: &ChebGrid, k: i32, mu: f64, lambdas: &[f64]) -> f64 {
    let n = g.n();
    let kf = k as f64;
    let w = g.weights();
    let d2 = g.d2();
    let mut best = f64::INFINITY;
    for &l in lambdas {
        let y = g.nodes();
        let b = DMatrix::<Complex64>::from_fn(n - 2, n - 2, |i, j| {
            let (ii, jj) = (i + 1, j + 1);
            let mut a = c(-mu * d2[(ii, jj)]);
            if ii == jj {
                a += Complex64::new(mu * kf * kf, kf * (y[ii] - l));
            }
            a * (w[ii] / w[jj]).sqrt()
        });
        let s = b.singular_values().iter().copied().fold(f64::INFINITY, f64::min);
        best = best.min(s);
    }
    best
}

#[test]
fn gap_matches_dense_svd_oracle() {
    let g = Arc::new(ChebGrid::new(64).unwrap());
    let lambdas = lambda_grid(-1.5, 1.5, 31);
    for mu in [1e-2, 1e-3, 1e-4] {
        let op = temperature_operator(&g, 1, mu).unwrap();
        let gap = gearhart_pruss_gap(&op, &lambdas).unwrap();
        let oracle = svd_gap(&g, 1, mu, &lambdas);
        assert!((gap - oracle).abs() <= 0.02 * oracle, "mu = {mu}: {gap} vs {oracle}");
    }
}

#[test]
fn mean_mode_gap_is_the_dirichlet_eigenvalue() {
    let g = Arc::new(ChebGrid::new(48).unwrap());
    for mu in [1e-2, 1e-3] {
        let op = temperature_operator(&g, 0, mu).unwrap();
        let gap = gearhart_pruss_gap(&op, &lambda_grid(-1.5, 1.5, 61)).unwrap();
        let exact = mu * PI * PI / 4.0;
        assert!((gap - exact).abs() <= 0.02 * exact, "{gap} vs {exact}");
    }
}

#[test]
fn refining_the_lambda_grid_never_raises_the_gap() {
    let g = Arc::new(ChebGrid::new(48).unwrap());
    let op = temperature_operator(&g, 2, 1e-3).unwrap();
    let coarse = gearhart_pruss_gap(&op, &lambda_grid(-1.5, 1.5, 7)).unwrap();
    let fine = gearhart_pruss_gap(&op, &lambda_grid(-1.5, 1.5, 13)).unwrap();
    assert!(fine <= coarse * (1.0 + 1e-10));
}

#[test]
fn sweep_is_deterministic_sorted_and_offsets_duplicates() {
    let g = Arc::new(ChebGrid::new(32).unwrap());
    let a = sweep_resolvent(&g, &[2, 1], &[1e-2], &[0.5, -0.5], 3, 11).unwrap();
    let b = sweep_resolvent(&g, &[2, 1], &[1e-2], &[0.5, -0.5], 3, 11).unwrap();
    assert_eq!(a.samples, b.samples);
    assert!(a.failures.is_empty());
    let keys: Vec<(i32, f64, usize)> = a.samples.iter().map(|s| (s.k, s.lambda, s.trial)).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.cmp(&y.2)));
    assert_eq!(keys, sorted);
    let dup = sweep_resolvent(&g, &[1], &[1e-2], &[0.0, 0.0], 1, 3).unwrap();
    assert_eq!(dup.samples.len(), 2);
    assert_ne!(dup.samples[0].norm_theta, dup.samples[1].norm_theta);
}
