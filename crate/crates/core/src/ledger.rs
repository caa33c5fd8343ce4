//! Space-time energy functionals of a nonlinear run and their audit.
//!
//! For `k != 0`
//!
//! ```text
//! E_k = ||(1-|y|)^{1/2} w_k||_{LinfL2} + |k| ||u_k||_{L2L2}
//!       + |k|^{1/2} ||u_k||_{LinfLinf} + (nu k^2)^{1/4} ||w_k||_{L2L2}
//! H_k = |k|^{1/6} ||T_k||_{LinfL2} + mu^{1/6} |k|^{1/2} ||T_k||_{L2L2}
//! ```
//!
//! and `E_0 = ||w_0||_{LinfL2}`, `H_0 = ||T_0||_{LinfL2}`. Time norms run
//! over the sampled horizon only. Suprema between samples are not seen.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{wall_weight, weighted_norm_values};
use crate::nonlinear::ChannelState;
use crate::semigroup::vector_max;

/// Default constant in front of the envelopes of the main estimate.
pub const DEFAULT_ENVELOPE_C: f64 = 4.0;

/// Accumulators for one wavenumber.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeLedger {
    pub k: i32,
    /// `sup_t ||(1-|y|)^{1/2} w_k||`.
    pub omega_wall_sup: f64,
    /// `sup_t ||w_k||`.
    pub omega_sup: f64,
    /// `int_0^T ||u_k||^2`, vector norm.
    pub u_int_sq: f64,
    /// `sup_t max_y |u_k|`.
    pub u_inf_sup: f64,
    /// `int_0^T ||w_k||^2`.
    pub omega_int_sq: f64,
    /// `sup_t ||T_k||`.
    pub theta_sup: f64,
    /// `int_0^T ||T_k||^2`.
    pub theta_int_sq: f64,
    /// `||w_in,k||`.
    pub init_omega: f64,
    /// `||d w_in,k||`.
    pub init_domega: f64,
    /// `||T_in,k||`.
    pub init_theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SampleNorms {
    u_sq: f64,
    omega_sq: f64,
    theta_sq: f64,
}

impl ModeLedger {
    pub fn e(&self, nu: f64) -> f64 {
        if self.k == 0 {
            return self.omega_sup;
        }
        let k = (self.k as f64).abs();
        self.omega_wall_sup
            + k * self.u_int_sq.sqrt()
            + k.sqrt() * self.u_inf_sup
            + (nu * k * k).powf(0.25) * self.omega_int_sq.sqrt()
    }

    pub fn h(&self, mu: f64) -> f64 {
        if self.k == 0 {
            return self.theta_sup;
        }
        let k = (self.k as f64).abs();
        k.powf(1.0 / 6.0) * self.theta_sup + mu.powf(1.0 / 6.0) * k.sqrt() * self.theta_int_sq.sqrt()
    }

    /// The same record for fields multiplied by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        let a2 = a * a;
        Self {
            k: self.k,
            omega_wall_sup: self.omega_wall_sup * a,
            omega_sup: self.omega_sup * a,
            u_int_sq: self.u_int_sq * a2,
            u_inf_sup: self.u_inf_sup * a,
            omega_int_sq: self.omega_int_sq * a2,
            theta_sup: self.theta_sup * a,
            theta_int_sq: self.theta_int_sq * a2,
            init_omega: self.init_omega * a,
            init_domega: self.init_domega * a,
            init_theta: self.init_theta * a,
        }
    }
}

/// Running space-time functionals for every `k` in `[-k_max, k_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub nu: f64,
    pub mu: f64,
    pub k_max: usize,
    /// Indexed by `k + k_max`.
    pub modes: Vec<ModeLedger>,
    pub times: Vec<f64>,
    last: Vec<Option<SampleNorms>>,
}

impl EnergyLedger {
    /// Empty ledger with initial-data norms taken from `initial`.
    pub fn new(initial: &ChannelState, nu: f64, mu: f64) -> Self {
        let k_max = initial.k_max();
        let grid = initial.grid();
        let modes = (-(k_max as i32)..=k_max as i32)
            .map(|k| {
                let w = initial.omega(k);
                ModeLedger {
                    k,
                    init_omega: grid.l2(w),
                    init_domega: grid.l2(&grid.diff(w)),
                    init_theta: grid.l2(initial.theta(k)),
                    ..Default::default()
                }
            })
            .collect();
        Self {
            nu,
            mu,
            k_max,
            modes,
            times: Vec::new(),
            last: vec![None; 2 * k_max + 1],
        }
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn mode(&self, k: i32) -> Option<&ModeLedger> {
        let idx = k + self.k_max as i32;
        if idx < 0 {
            return None;
        }
        self.modes.get(idx as usize)
    }

    /// Add one sample, `dt_since_last` after the previous one. Suprema are
    /// updated by max, time integrals by one trapezoid; a zero increment
    /// leaves the integrals unchanged.
    pub fn accumulate(&mut self, state: &ChannelState, dt_since_last: f64) -> Result<()> {
        if state.k_max() != self.k_max {
            return Err(LabError::Shape {
                expected: 2 * self.k_max + 1,
                found: 2 * state.k_max() + 1,
            });
        }
        let t = match self.times.last() {
            Some(&t0) => t0 + dt_since_last,
            None => 0.0,
        };
        let grid = state.grid();
        let wall: &dyn Fn(f64) -> f64 = &wall_weight;
        for (idx, m) in self.modes.iter_mut().enumerate() {
            let k = m.k;
            let w = state.omega(k);
            let (u1, u2) = (state.u1(k), state.u2(k));
            let th = state.theta(k);
            let now = SampleNorms {
                u_sq: grid.l2(u1).powi(2) + grid.l2(u2).powi(2),
                omega_sq: grid.l2(w).powi(2),
                theta_sq: grid.l2(th).powi(2),
            };
            m.omega_wall_sup = m.omega_wall_sup.max(weighted_norm_values(grid, w, Some(wall)));
            m.omega_sup = m.omega_sup.max(now.omega_sq.sqrt());
            m.u_inf_sup = m.u_inf_sup.max(vector_max(u1, u2));
            m.theta_sup = m.theta_sup.max(now.theta_sq.sqrt());
            if let Some(prev) = self.last[idx] {
                let h = 0.5 * dt_since_last;
                m.u_int_sq += h * (prev.u_sq + now.u_sq);
                m.omega_int_sq += h * (prev.omega_sq + now.omega_sq);
                m.theta_int_sq += h * (prev.theta_sq + now.theta_sq);
            }
            self.last[idx] = Some(now);
        }
        if dt_since_last > 0.0 || self.times.is_empty() {
            self.times.push(t);
        }
        Ok(())
    }

    pub fn e(&self, k: i32) -> f64 {
        self.mode(k).map_or(0.0, |m| m.e(self.nu))
    }

    pub fn h(&self, k: i32) -> f64 {
        self.mode(k).map_or(0.0, |m| m.h(self.mu))
    }

    pub fn sum_e(&self) -> f64 {
        self.modes.iter().map(|m| m.e(self.nu)).sum()
    }

    pub fn sum_h(&self) -> f64 {
        self.modes.iter().map(|m| m.h(self.mu)).sum()
    }

    /// `sum_k ||w_in,k|| + sum_{k != 0} |k|^{-1} ||d w_in,k||`.
    pub fn velocity_data_bound(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                if m.k == 0 {
                    m.init_omega
                } else {
                    m.init_omega + m.init_domega / (m.k as f64).abs()
                }
            })
            .sum()
    }

    /// `||T_in,0|| + sum_{k != 0} |k|^{1/6} ||T_in,k||`.
    pub fn temperature_data_bound(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| (m.k as f64).abs().powf(1.0 / 6.0).max(if m.k == 0 { 1.0 } else { 0.0 }) * m.init_theta)
            .sum()
    }

    /// Share of the `|k| = k_max` modes in `(sum E_k, sum H_k)`.
    pub fn tail_indicator(&self) -> (f64, f64) {
        let km = self.k_max as i32;
        let share = |top: f64, total: f64| if total > 0.0 { top / total } else { 0.0 };
        (
            share(self.e(km) + self.e(-km), self.sum_e()),
            share(self.h(km) + self.h(-km), self.sum_h()),
        )
    }

    /// The ledger of the same run with every field multiplied by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        Self {
            nu: self.nu,
            mu: self.mu,
            k_max: self.k_max,
            modes: self.modes.iter().map(|m| m.scaled(a)).collect(),
            times: self.times.clone(),
            last: vec![None; self.modes.len()],
        }
    }

    pub fn rows(&self) -> Vec<LedgerRow> {
        self.modes
            .iter()
            .map(|m| LedgerRow {
                k: m.k,
                nu: self.nu,
                mu: self.mu,
                horizon: self.horizon(),
                omega_wall_sup: m.omega_wall_sup,
                omega_sup: m.omega_sup,
                u_l2l2: m.u_int_sq.sqrt(),
                u_linf_linf: m.u_inf_sup,
                omega_l2l2: m.omega_int_sq.sqrt(),
                theta_linf_l2: m.theta_sup,
                theta_l2l2: m.theta_int_sq.sqrt(),
                e_k: m.e(self.nu),
                h_k: m.h(self.mu),
                init_omega: m.init_omega,
                init_domega: m.init_domega,
                init_theta: m.init_theta,
            })
            .collect()
    }

    /// Rebuild a finalized ledger from its CSV rows.
    pub fn from_rows(rows: &[LedgerRow]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| LabError::Config("empty ledger".into()))?;
        let k_max = rows.iter().map(|r| r.k.unsigned_abs() as usize).max().unwrap_or(0);
        if rows.len() != 2 * k_max + 1 {
            return Err(LabError::Config(format!(
                "ledger has {} rows, expected {} for k_max = {k_max}",
                rows.len(),
                2 * k_max + 1
            )));
        }
        let mut modes = vec![ModeLedger::default(); rows.len()];
        for r in rows {
            let idx = (r.k + k_max as i32) as usize;
            modes[idx] = ModeLedger {
                k: r.k,
                omega_wall_sup: r.omega_wall_sup,
                omega_sup: r.omega_sup,
                u_int_sq: r.u_l2l2 * r.u_l2l2,
                u_inf_sup: r.u_linf_linf,
                omega_int_sq: r.omega_l2l2 * r.omega_l2l2,
                theta_sup: r.theta_linf_l2,
                theta_int_sq: r.theta_l2l2 * r.theta_l2l2,
                init_omega: r.init_omega,
                init_domega: r.init_domega,
                init_theta: r.init_theta,
            };
        }
        if modes.iter().enumerate().any(|(i, m)| m.k != i as i32 - k_max as i32) {
            return Err(LabError::Config("ledger rows do not cover -k_max..=k_max".into()));
        }
        Ok(Self {
            nu: first.nu,
            mu: first.mu,
            k_max,
            modes,
            times: vec![0.0, first.horizon],
            last: vec![None; rows.len()],
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_records_to_path(path, "ledger", &self.rows())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_rows(&crate::io::read_records_from_path::<LedgerRow>(path)?)
    }
}

/// One CSV line per wavenumber. `horizon` is the length of the sampled
/// time interval: every time norm is truncated there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub k: i32,
    pub nu: f64,
    pub mu: f64,
    pub horizon: f64,
    pub omega_wall_sup: f64,
    pub omega_sup: f64,
    pub u_l2l2: f64,
    pub u_linf_linf: f64,
    pub omega_l2l2: f64,
    pub theta_linf_l2: f64,
    pub theta_l2l2: f64,
    pub e_k: f64,
    pub h_k: f64,
    pub init_omega: f64,
    pub init_domega: f64,
    pub init_theta: f64,
}

// ----------------------------------------------------------------- audit

/// Which bootstrap inequality an audit line refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// `E_k` for `k != 0`.
    Vorticity,
    /// `E_0`.
    VorticityMean,
    /// `H_0`.
    TemperatureMean,
    /// `H_k` with `mu k^2 <= 1`.
    TemperatureLow,
    /// `H_k` with `mu k^2 > 1`.
    TemperatureHigh,
}

/// Both sides of one inequality at one `k`, all constants set to one.
///
/// `rhs_data` is the initial-data term; `rhs_2` and `rhs_3` are the
/// remaining terms in the order they are written (zero where absent).
/// `implied_c` is `lhs / (rhs_data + rhs_2 + rhs_3)`, the smallest common
/// constant; `excess_c` is `max(0, lhs - rhs_data) / (rhs_2 + rhs_3)`, the
/// smallest constant when the data term enters with coefficient one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditLine {
    pub inequality: Inequality,
    pub k: i32,
    pub lhs: f64,
    pub rhs_data: f64,
    pub rhs_2: f64,
    pub rhs_3: f64,
    pub implied_c: f64,
    pub excess_c: f64,
}

impl AuditLine {
    fn new(inequality: Inequality, k: i32, lhs: f64, rhs_data: f64, rhs_2: f64, rhs_3: f64) -> Self {
        let total = rhs_data + rhs_2 + rhs_3;
        let implied_c = ratio(lhs, total);
        let excess_c = ratio((lhs - rhs_data).max(0.0), rhs_2 + rhs_3);
        Self {
            inequality,
            k,
            lhs,
            rhs_data,
            rhs_2,
            rhs_3,
            implied_c,
            excess_c,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Evaluate every bootstrap inequality at every `k` of the ledger. Modes
/// outside `[-k_max, k_max]` count as zero.
pub fn audit_bootstrap(ledger: &EnergyLedger) -> Vec<AuditLine> {
    let (nu, mu) = (ledger.nu, ledger.mu);
    let km = ledger.k_max as i32;
    let e: Vec<f64> = (-km..=km).map(|k| ledger.e(k)).collect();
    let h: Vec<f64> = (-km..=km).map(|k| ledger.h(k)).collect();
    let at = |v: &Vec<f64>, k: i32| -> f64 {
        if k.abs() > km {
            0.0
        } else {
            v[(k + km) as usize]
        }
    };
    // sum over l of a_l b_{k-l}, with l restricted by `keep`
    let conv = |a: &Vec<f64>, b: &Vec<f64>, k: i32, keep: &dyn Fn(i32) -> bool| -> f64 {
        (-km..=km)
            .filter(|&l| keep(l))
            .map(|l| at(a, l) * at(b, k - l))
            .sum()
    };
    let mut out = Vec::with_capacity(2 * (2 * km as usize + 1));
    let nu_h = nu.powf(-0.5);
    let mu_h = mu.powf(-0.5);
    let buoy = nu.powf(-0.25) * mu.powf(-1.0 / 6.0);
    let cross = nu.powf(-0.125) * mu.powf(-5.0 / 24.0);
    for k in -km..=km {
        let m = ledger.mode(k).expect("k in range");
        if k == 0 {
            out.push(AuditLine::new(
                Inequality::VorticityMean,
                0,
                at(&e, 0),
                m.init_omega,
                nu_h * conv(&e, &e, 0, &|l| l != 0),
                0.0,
            ));
            let weighted: Vec<f64> = (-km..=km)
                .map(|l| if l == 0 { 0.0 } else { (l as f64).abs().powf(-2.0 / 3.0) * at(&e, l) })
                .collect();
            out.push(AuditLine::new(
                Inequality::TemperatureMean,
                0,
                at(&h, 0),
                m.init_theta,
                mu_h * conv(&weighted, &h, 0, &|l| l != 0),
                0.0,
            ));
            continue;
        }
        let kf = (k as f64).abs();
        out.push(AuditLine::new(
            Inequality::Vorticity,
            k,
            at(&e, k),
            m.init_omega + m.init_domega / kf,
            nu_h * conv(&e, &e, k, &|_| true),
            buoy * at(&h, k),
        ));
        let data = kf.powf(1.0 / 6.0) * m.init_theta;
        let transport = mu_h * conv(&e, &h, k, &|_| true);
        if mu * kf * kf <= 1.0 {
            let near = cross
                * conv(&e, &h, k, &|l| l != 0 && l != k && 2 * (k - l).abs() <= k.abs());
            out.push(AuditLine::new(Inequality::TemperatureLow, k, at(&h, k), data, transport, near));
        } else {
            out.push(AuditLine::new(
                Inequality::TemperatureHigh,
                k,
                at(&h, k),
                data,
                transport,
                cross * at(&e, k) * at(&h, 0),
            ));
        }
    }
    out
}

pub fn write_audit_csv(path: &Path, lines: &[AuditLine]) -> Result<()> {
    crate::io::write_records_to_path(path, "audit", lines)
}

/// Sums of the functionals against `c eps min(nu, mu)^{1/2}` and
/// `c eps1 min(nu, mu)^{11/12}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MainEstimate {
    pub sum_e: f64,
    pub sum_h: f64,
    pub bound_e: f64,
    pub bound_h: f64,
    pub pass_e: bool,
    pub pass_h: bool,
}

pub fn main_estimate_check(ledger: &EnergyLedger, eps0: f64, eps1: f64, c: f64) -> MainEstimate {
    let m = ledger.nu.min(ledger.mu);
    let sum_e = ledger.sum_e();
    let sum_h = ledger.sum_h();
    let bound_e = c * eps0 * m.sqrt();
    let bound_h = c * eps1 * m.powf(11.0 / 12.0);
    MainEstimate {
        sum_e,
        sum_h,
        bound_e,
        bound_h,
        pass_e: sum_e <= bound_e,
        pass_h: sum_h <= bound_h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger_with(values: &[(i32, f64, f64)], k_max: usize) -> EnergyLedger {
        let modes = (-(k_max as i32)..=k_max as i32)
            .map(|k| {
                let (w, t) = values
                    .iter()
                    .find(|v| v.0 == k)
                    .map_or((0.0, 0.0), |v| (v.1, v.2));
                ModeLedger {
                    k,
                    omega_sup: w,
                    omega_wall_sup: w,
                    theta_sup: t,
                    init_omega: w,
                    init_theta: t,
                    ..Default::default()
                }
            })
            .collect();
        EnergyLedger {
            nu: 1e-3,
            mu: 1e-3,
            k_max,
            modes,
            times: vec![0.0, 1.0],
            last: vec![None; 2 * k_max + 1],
        }
    }

    #[test]
    fn zero_ledger_audits_to_zero() {
        let l = ledger_with(&[], 3);
        for line in audit_bootstrap(&l) {
            assert_eq!(line.implied_c, 0.0);
            assert_eq!(line.excess_c, 0.0);
        }
        let m = main_estimate_check(&l, 0.1, 0.1, DEFAULT_ENVELOPE_C);
        assert!(m.pass_e && m.pass_h && m.sum_e == 0.0);
    }

    #[test]
    fn quadratic_terms_scale_with_the_square() {
        let l = ledger_with(&[(1, 1.0, 0.5), (-1, 1.0, 0.5), (2, 0.3, 0.1), (-2, 0.3, 0.1), (0, 0.2, 0.4)], 4);
        let a = 7.0;
        let base = audit_bootstrap(&l);
        let scaled = audit_bootstrap(&l.scaled(a));
        for (b, s) in base.iter().zip(&scaled) {
            assert!((s.lhs - a * b.lhs).abs() <= 1e-12 * s.lhs.abs().max(1.0));
            assert!((s.rhs_data - a * b.rhs_data).abs() <= 1e-12 * s.rhs_data.max(1.0));
            if b.inequality != Inequality::Vorticity {
                assert!((s.rhs_2 - a * a * b.rhs_2).abs() <= 1e-12 * s.rhs_2.max(1.0));
            }
        }
    }

    #[test]
    fn restricted_sum_keeps_nearby_wavenumbers() {
        // only l = 3 (|k - l| = 1 <= 2) contributes to k = 4 from these modes
        let l = ledger_with(&[(3, 1.0, 0.0), (1, 0.0, 2.0), (-1, 0.0, 1.0)], 4);
        let line = audit_bootstrap(&l)
            .into_iter()
            .find(|a| a.k == 4 && a.inequality == Inequality::TemperatureLow)
            .unwrap();
        let cross = 1e-3f64.powf(-0.125) * 1e-3f64.powf(-5.0 / 24.0);
        let h1 = 1.0f64.powf(1.0 / 6.0) * 2.0;
        assert!((line.rhs_3 - cross * 1.0 * h1).abs() < 1e-12 * line.rhs_3);
    }
}
