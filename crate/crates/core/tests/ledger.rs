use std::sync::Arc;

use couette_lab::grid::wall_weight;
use couette_lab::ledger::{
    audit_bootstrap, main_estimate_check, AuditLine, EnergyLedger, Inequality, LedgerRow,
};
use couette_lab::nonlinear::{
    read_snapshot, run, ChannelState, InitConfig, MeanProfile, ModeWeight, OutputConfig, RunConfig, ThetaProfile,
    VelocityProfile,
};
use couette_lab::operators::OperatorKind;
use couette_lab::semigroup::{spacetime_norm, velocity_spacetime_norm, Exponent, Trajectory};
use couette_lab::ChebGrid;
use proptest::prelude::*;

fn config(dir: Option<&std::path::Path>) -> RunConfig {
    RunConfig {
        n: 32,
        k_max: 3,
        nu: 1e-2,
        mu: 2e-2,
        eps0: 0.0,
        eps1: 0.0,
        velocity_amplitude: Some(0.4),
        theta_amplitude: Some(0.2),
        init: InitConfig {
            velocity_profile: VelocityProfile::Random,
            velocity_modes: vec![ModeWeight { k: 1, re: 1.0, im: 0.0 }, ModeWeight { k: 2, re: 0.3, im: 0.4 }],
            mean_profile: Some(MeanProfile::Parabola),
            theta_profile: ThetaProfile::Random,
            theta_modes: vec![ModeWeight { k: 0, re: 1.0, im: 0.0 }, ModeWeight { k: 3, re: 0.5, im: 0.0 }],
        },
        horizon: 1.0,
        dt: 0.01,
        sample_every: 3,
        seed: 11,
        nonlinear: true,
        blowup_factor: 1e6,
        envelope_stop: None,
        output: OutputConfig {
            snapshots: dir.map(|d| d.to_path_buf()),
            ..Default::default()
        },
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn online_functionals_match_offline_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Some(dir.path()));
    let out = run(&cfg).unwrap();
    let grid = Arc::new(ChebGrid::new(cfg.n).unwrap());
    let mut paths: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    let states: Vec<ChannelState> = paths.iter().map(|p| read_snapshot(p, &grid).unwrap()).collect();
    assert_eq!(states.len(), out.ledger.times.len());

    let km = cfg.k_max as i32;
    let wall: &dyn Fn(f64) -> f64 = &wall_weight;
    for k in -km..=km {
        let mut w = Trajectory::new(Arc::clone(&grid), k, cfg.nu, OperatorKind::Vorticity);
        let mut th = Trajectory::new(Arc::clone(&grid), k, cfg.mu, OperatorKind::Temperature);
        for s in &states {
            w.push(s.time, s.omega(k).clone());
            w.velocities.push([s.u1(k).clone(), s.u2(k).clone()]);
            th.push(s.time, s.theta(k).clone());
        }
        let (e, h) = if k == 0 {
            (
                spacetime_norm(&w, Exponent::Infinity, Exponent::Two, None),
                spacetime_norm(&th, Exponent::Infinity, Exponent::Two, None),
            )
        } else {
            let kf = (k as f64).abs();
            (
                spacetime_norm(&w, Exponent::Infinity, Exponent::Two, Some(wall))
                    + kf * velocity_spacetime_norm(&w, Exponent::Two, Exponent::Two)
                    + kf.sqrt() * velocity_spacetime_norm(&w, Exponent::Infinity, Exponent::Infinity)
                    + (cfg.nu * kf * kf).powf(0.25) * spacetime_norm(&w, Exponent::Two, Exponent::Two, None),
                kf.powf(1.0 / 6.0) * spacetime_norm(&th, Exponent::Infinity, Exponent::Two, None)
                    + cfg.mu.powf(1.0 / 6.0) * kf.sqrt() * spacetime_norm(&th, Exponent::Two, Exponent::Two, None),
            )
        };
        assert!(close(out.ledger.e(k), e, 1e-10), "E_{k}: {} vs {e}", out.ledger.e(k));
        assert!(close(out.ledger.h(k), h, 1e-10), "H_{k}: {} vs {h}", out.ledger.h(k));
    }
}

#[test]
fn conjugate_modes_carry_equal_functionals() {
    let out = run(&config(None)).unwrap();
    for k in 1..=3 {
        assert!(close(out.ledger.e(k), out.ledger.e(-k), 1e-14));
        assert!(close(out.ledger.h(k), out.ledger.h(-k), 1e-14));
    }
    assert!(out.ledger.sum_e() > 0.0 && out.ledger.sum_h() > 0.0);
}

#[test]
fn functionals_never_decrease_along_a_run() {
    let mut cfg = config(None);
    let mut previous = (0.0, 0.0);
    for horizon in [0.2, 0.4, 0.6, 0.8, 1.0] {
        cfg.horizon = horizon;
        let out = run(&cfg).unwrap();
        let now = (out.ledger.sum_e(), out.ledger.sum_h());
        assert!(now.0 >= previous.0 && now.1 >= previous.1);
        previous = now;
    }
}

fn row(k: i32, vals: [f64; 10]) -> LedgerRow {
    LedgerRow {
        k,
        nu: 1e-2,
        mu: 1e-3,
        horizon: 5.0,
        omega_wall_sup: vals[0],
        omega_sup: vals[1],
        u_l2l2: vals[2],
        u_linf_linf: vals[3],
        omega_l2l2: vals[4],
        theta_linf_l2: vals[5],
        theta_l2l2: vals[6],
        e_k: 0.0,
        h_k: 0.0,
        init_omega: vals[7],
        init_domega: vals[8],
        init_theta: vals[9],
    }
}

fn hand_ledger() -> EnergyLedger {
    EnergyLedger::from_rows(&[
        row(-1, [0.3, 0.4, 0.2, 0.1, 0.5, 0.2, 0.3, 0.5, 0.6, 0.1]),
        row(0, [0.0, 0.7, 0.0, 0.0, 0.0, 0.4, 0.0, 0.6, 0.0, 0.3]),
        row(1, [0.3, 0.4, 0.2, 0.1, 0.5, 0.2, 0.3, 0.5, 0.6, 0.1]),
    ])
    .unwrap()
}

fn line(lines: &[AuditLine], q: Inequality, k: i32) -> AuditLine {
    *lines.iter().find(|l| l.inequality == q && l.k == k).unwrap()
}

#[test]
fn audit_matches_hand_arithmetic() {
    let l = hand_ledger();
    let (nu, mu): (f64, f64) = (1e-2, 1e-3);
    let e1 = 0.3 + 0.2 + 0.1 + (nu).powf(0.25) * 0.5;
    let h1 = 0.2 + mu.powf(1.0 / 6.0) * 0.3;
    let (e0, h0) = (0.7, 0.4);
    assert!(close(l.e(1), e1, 1e-14) && close(l.h(1), h1, 1e-14));
    assert!(close(l.e(0), e0, 1e-14) && close(l.h(0), h0, 1e-14));

    let a = audit_bootstrap(&l);
    // k = 1: the convolution over |l|, |1 - l| <= 1 pairs (0, 1) and (1, 0).
    let v = line(&a, Inequality::Vorticity, 1);
    assert!(close(v.lhs, e1, 1e-14));
    assert!(close(v.rhs_data, 0.5 + 0.6, 1e-14));
    assert!(close(v.rhs_2, nu.powf(-0.5) * 2.0 * e0 * e1, 1e-14));
    assert!(close(v.rhs_3, nu.powf(-0.25) * mu.powf(-1.0 / 6.0) * h1, 1e-14));
    assert!(close(v.implied_c, e1 / (v.rhs_data + v.rhs_2 + v.rhs_3), 1e-14));

    let m = line(&a, Inequality::VorticityMean, 0);
    assert!(close(m.rhs_2, nu.powf(-0.5) * 2.0 * e1 * e1, 1e-14));
    let t0 = line(&a, Inequality::TemperatureMean, 0);
    assert!(close(t0.rhs_2, mu.powf(-0.5) * 2.0 * e1 * h1, 1e-14));
    // mu k^2 <= 1: the near-diagonal sum excludes l = 0 and l = k.
    let t1 = line(&a, Inequality::TemperatureLow, 1);
    assert!(close(t1.rhs_data, 0.1, 1e-14));
    assert!(close(t1.rhs_2, mu.powf(-0.5) * (e0 * h1 + e1 * h0), 1e-14));
    assert_eq!(t1.rhs_3, 0.0);

    let me = main_estimate_check(&l, 2.0, 3.0, 4.0);
    assert!(close(me.bound_e, 4.0 * 2.0 * mu.sqrt(), 1e-14));
    assert!(close(me.bound_h, 4.0 * 3.0 * mu.powf(11.0 / 12.0), 1e-14));
    assert!(close(me.sum_e, e0 + 2.0 * e1, 1e-14));
    assert_eq!(me.pass_e, me.sum_e <= me.bound_e);
}

#[test]
fn high_frequency_temperature_line() {
    let mut rows = vec![];
    for k in -2..=2 {
        rows.push(LedgerRow { mu: 0.5, ..row(k, [0.1; 10]) });
    }
    let l = EnergyLedger::from_rows(&rows).unwrap();
    let a = audit_bootstrap(&l);
    // mu k^2 = 2 > 1 at k = 2.
    let t = line(&a, Inequality::TemperatureHigh, 2);
    let cross = 1e-2f64.powf(-0.125) * 0.5f64.powf(-5.0 / 24.0);
    assert!(close(t.rhs_3, cross * l.e(2) * l.h(0), 1e-14));
    assert!(a.iter().any(|x| x.inequality == Inequality::TemperatureLow && x.k == 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn audit_terms_scale_with_field_size(a in 1e-3f64..1e3) {
        let base = hand_ledger();
        let lines = audit_bootstrap(&base);
        let scaled = audit_bootstrap(&base.scaled(a));
        for (x, y) in lines.iter().zip(&scaled) {
            prop_assert!(close(y.lhs, a * x.lhs, 1e-10));
            prop_assert!(close(y.rhs_data, a * x.rhs_data, 1e-10));
            prop_assert!(close(y.rhs_2, a * a * x.rhs_2, 1e-10));
            let p = if x.inequality == Inequality::Vorticity { 1 } else { 2 };
            prop_assert!(close(y.rhs_3, a.powi(p) * x.rhs_3, 1e-10));
        }
    }
}

#[test]
fn run_ledger_scales_like_its_fields() {
    let mut cfg = config(None);
    cfg.nonlinear = false;
    let base = run(&cfg).unwrap().ledger;
    cfg.velocity_amplitude = Some(0.4 * 7.0);
    cfg.theta_amplitude = Some(0.2 * 7.0);
    let big = run(&cfg).unwrap().ledger;
    for k in -3..=3 {
        assert!(close(big.e(k), 7.0 * base.e(k), 1e-10));
        assert!(close(big.h(k), 7.0 * base.h(k), 1e-10));
    }
}

#[test]
fn csv_round_trip_reproduces_the_audit() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config(None)).unwrap();
    let path = dir.path().join("ledger.csv");
    out.ledger.write_csv(&path).unwrap();
    let back = EnergyLedger::read_csv(&path).unwrap();
    assert_eq!(back.horizon(), out.ledger.horizon());
    for (x, y) in audit_bootstrap(&out.ledger).iter().zip(&audit_bootstrap(&back)) {
        assert_eq!(x.inequality, y.inequality);
        for (p, q) in [(x.lhs, y.lhs), (x.rhs_2, y.rhs_2), (x.rhs_3, y.rhs_3), (x.implied_c, y.implied_c)] {
            assert!(close(p, q, 1e-12));
        }
    }
}
