//! Resolvent problems for the temperature operator.
//!
//! For real `lambda` we solve
//! `-mu (d^2 - k^2) T + i k (y - lambda) T = F`, `T(+-1) = 0`, measure the
//! weighted norms that appear in the sharp resolvent bounds, and compute
//! the resolvent gap along the imaginary axis.

use std::cmp::Ordering;
use std::sync::Arc;

use nalgebra::{Dyn, LU};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{hminus1_values, CMatrix, CVector, ChebGrid, ModeField};
use crate::operators::{assemble_mode_operator, FluidParams, ModeOperator, OperatorKind};

/// Largest normwise backward error accepted from a resolvent solve.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// One resolvent solve together with its norm ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolventSample {
    pub k: i32,
    pub mu: f64,
    pub lambda: f64,
    pub trial: usize,
    pub norm_f: f64,
    pub norm_theta: f64,
    pub norm_dtheta: f64,
    pub norm_shift: f64,
    pub ratio_l2: f64,
    pub ratio_hm1: f64,
}

/// Temperature operator for diffusivity `mu`.
pub fn temperature_operator(grid: &Arc<ChebGrid>, k: i32, mu: f64) -> Result<ModeOperator> {
    let params = FluidParams::new(mu, mu)?;
    Ok(assemble_mode_operator(grid, k, &params, OperatorKind::Temperature))
}

fn check_resolvent_op(op: &ModeOperator) -> Result<()> {
    if op.kind != OperatorKind::Temperature {
        return Err(LabError::Config(
            "resolvent problems are posed for the temperature operator".into(),
        ));
    }
    if op.k == 0 {
        return Err(LabError::Config("resolvent problems need k != 0".into()));
    }
    Ok(())
}

fn shifted_matrix(op: &ModeOperator, lambda: f64) -> CMatrix {
    let n = op.grid().n();
    let mut a = op.matrix.clone();
    let shift = Complex64::new(0.0, op.k as f64 * lambda);
    for i in 1..n - 1 {
        a[(i, i)] -= shift;
    }
    a
}

/// Factored resolvent at one spectral parameter.
struct Resolvent {
    a: CMatrix,
    lu: LU<Complex64, Dyn, Dyn>,
}

impl Resolvent {
    fn new(op: &ModeOperator, lambda: f64) -> Result<Self> {
        let a = shifted_matrix(op, lambda);
        let lu = a.clone().lu();
        if !lu.is_invertible() {
            return Err(LabError::Singular("resolvent operator"));
        }
        Ok(Self { a, lu })
    }

    fn solve(&self, f: &CVector) -> Result<CVector> {
        let n = f.len();
        let mut rhs = f.clone();
        rhs[0] = Complex64::new(0.0, 0.0);
        rhs[n - 1] = Complex64::new(0.0, 0.0);
        let x = self
            .lu
            .solve(&rhs)
            .ok_or(LabError::Singular("resolvent operator"))?;
        let r = &self.a * &x - &rhs;
        let a_norm = self
            .a
            .row_iter()
            .map(|row| row.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let inf = |v: &CVector| v.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let scale = a_norm * inf(&x) + inf(&rhs);
        let backward = if scale > 0.0 { inf(&r) / scale } else { 0.0 };
        if !backward.is_finite() || backward > RESIDUAL_TOL {
            let cond = if inf(&rhs) > 0.0 {
                a_norm * inf(&x) / inf(&rhs)
            } else {
                f64::INFINITY
            };
            return Err(LabError::Numerical(format!(
                "resolvent residual {backward:.2e} exceeds {RESIDUAL_TOL:.0e} (condition estimate >= {cond:.2e})"
            )));
        }
        Ok(x)
    }
}

/// Solve the resolvent problem; boundary entries of `f` are ignored.
pub fn solve_resolvent(op: &ModeOperator, lambda: f64, f: &ModeField) -> Result<ModeField> {
    check_resolvent_op(op)?;
    op.grid().check_len(f.len())?;
    let x = Resolvent::new(op, lambda)?.solve(&f.values)?;
    Ok(ModeField::new(op.k, x))
}

fn sample_from_solution(
    grid: &ChebGrid,
    k: i32,
    mu: f64,
    lambda: f64,
    f: &CVector,
    theta: &CVector,
) -> ResolventSample {
    let kf = (k as f64).abs();
    let norm_f = grid.l2(f);
    let norm_theta = grid.l2(theta);
    let norm_dtheta = grid.l2(&grid.diff(theta));
    let shifted = CVector::from_iterator(
        theta.len(),
        theta
            .iter()
            .zip(grid.nodes())
            .map(|(t, y)| t * (y - lambda)),
    );
    let norm_shift = grid.l2(&shifted);
    let (ratio_l2, ratio_hm1) = if norm_f == 0.0 {
        (0.0, 0.0)
    } else {
        let l2 = mu.powf(2.0 / 3.0) * kf.powf(1.0 / 3.0) * norm_dtheta
            + (mu * kf * kf).powf(1.0 / 3.0) * norm_theta
            + kf * norm_shift;
        let hm1 = mu * norm_dtheta + mu.powf(2.0 / 3.0) * kf.powf(1.0 / 3.0) * norm_theta;
        (l2 / norm_f, hm1 / hminus1_values(grid, f))
    };
    ResolventSample {
        k,
        mu,
        lambda,
        trial: 0,
        norm_f,
        norm_theta,
        norm_dtheta,
        norm_shift,
        ratio_l2,
        ratio_hm1,
    }
}

/// Solve once and fill in every norm and both ratios.
pub fn resolvent_ratios(
    grid: &Arc<ChebGrid>,
    k: i32,
    mu: f64,
    lambda: f64,
    f: &ModeField,
) -> Result<ResolventSample> {
    let op = temperature_operator(grid, k, mu)?;
    let theta = solve_resolvent(&op, lambda, f)?;
    let mut rhs = f.values.clone();
    let n = rhs.len();
    rhs[0] = Complex64::new(0.0, 0.0);
    rhs[n - 1] = Complex64::new(0.0, 0.0);
    Ok(sample_from_solution(grid, k, mu, lambda, &rhs, &theta.values))
}

/// Complex white noise at the interior nodes, unit L2 norm, zero on the walls.
pub fn random_forcing(grid: &ChebGrid, rng: &mut ChaCha8Rng) -> CVector {
    let n = grid.n();
    let mut f = CVector::zeros(n);
    for i in 1..n - 1 {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        f[i] = Complex64::new(re, im);
    }
    let norm = grid.l2(&f);
    f / Complex64::new(norm, 0.0)
}

/// Symmetrized interior operator `W^{1/2} (A - i k lambda) W^{-1/2}`.
fn weighted_interior(op: &ModeOperator, lambda: f64) -> CMatrix {
    let n = op.grid().n();
    let w = op.grid().weights();
    let mut b = shifted_matrix(op, lambda)
        .view((1, 1), (n - 2, n - 2))
        .into_owned();
    for i in 0..n - 2 {
        for j in 0..n - 2 {
            b[(i, j)] *= (w[i + 1] / w[j + 1]).sqrt();
        }
    }
    b
}

/// Smallest singular value by inverse iteration on `B^H B`.
fn smallest_singular_value(b: &CMatrix) -> Result<f64> {
    let m = b.nrows();
    let lu = b.clone().lu();
    let lu_h = b.adjoint().lu();
    if !lu.is_invertible() {
        return Ok(0.0);
    }
    let mut x = CVector::from_fn(m, |i, _| Complex64::new(1.0 + (i as f64).sin(), 0.0));
    x /= Complex64::new(x.norm(), 0.0);
    let mut sigma = f64::INFINITY;
    for _ in 0..2000 {
        let y = lu_h.solve(&x).ok_or(LabError::Singular("adjoint resolvent"))?;
        let z = lu.solve(&y).ok_or(LabError::Singular("resolvent"))?;
        let zn = z.norm();
        if zn == 0.0 || !zn.is_finite() {
            return Ok(0.0);
        }
        x = z / Complex64::new(zn, 0.0);
        let next = (b * &x).norm();
        if (sigma - next).abs() <= 1e-13 * next {
            return Ok(next);
        }
        sigma = next;
    }
    Err(LabError::Numerical(
        "inverse iteration for the smallest singular value did not converge".into(),
    ))
}

/// `min_lambda sigma_min(A - i k lambda)` on the interior unknowns, in the
/// quadrature-weighted L2 geometry. For `k = 0` the grid is irrelevant.
pub fn gearhart_pruss_gap(op: &ModeOperator, lambda_grid: &[f64]) -> Result<f64> {
    if op.kind != OperatorKind::Temperature {
        return Err(LabError::Config(
            "the resolvent gap is computed for the temperature operator".into(),
        ));
    }
    if lambda_grid.is_empty() {
        return Err(LabError::Config("empty lambda grid".into()));
    }
    let lambdas: &[f64] = if op.k == 0 { &lambda_grid[..1] } else { lambda_grid };
    let values: Vec<f64> = lambdas
        .par_iter()
        .map(|&l| smallest_singular_value(&weighted_interior(op, l)))
        .collect::<Result<_>>()?;
    Ok(values.into_iter().fold(f64::INFINITY, f64::min))
}

/// Evenly spaced lambda values on `[lo, hi]`.
pub fn lambda_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// A sweep point that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub k: i32,
    pub mu: f64,
    pub lambda: f64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ResolventSweep {
    pub samples: Vec<ResolventSample>,
    pub failures: Vec<SweepFailure>,
}

impl ResolventSweep {
    pub fn max_ratio_l2(&self) -> f64 {
        self.samples.iter().map(|s| s.ratio_l2).fold(0.0, f64::max)
    }

    /// Largest `ratio_l2` at one `(k, mu)`.
    pub fn max_ratio_at(&self, k: i32, mu: f64) -> Option<f64> {
        self.samples
            .iter()
            .filter(|s| s.k == k && s.mu == mu)
            .map(|s| s.ratio_l2)
            .reduce(f64::max)
    }
}

/// Random-forcing sweep over `k x mu x lambda`. Point `p` (in that nested
/// order) draws its `trials` fields from a generator seeded by `seed + p`.
pub fn sweep_resolvent(
    grid: &Arc<ChebGrid>,
    k_list: &[i32],
    mu_list: &[f64],
    lambda_list: &[f64],
    trials: usize,
    seed: u64,
) -> Result<ResolventSweep> {
    if k_list.is_empty() || mu_list.is_empty() || lambda_list.is_empty() {
        return Err(LabError::Config("sweep lists must be nonempty".into()));
    }
    if trials == 0 {
        return Err(LabError::Config("trials must be at least 1".into()));
    }
    let mut points = Vec::new();
    for &k in k_list {
        for &mu in mu_list {
            for &lambda in lambda_list {
                points.push((k, mu, lambda));
            }
        }
    }
    let results: Vec<std::result::Result<Vec<ResolventSample>, SweepFailure>> = points
        .par_iter()
        .enumerate()
        .map(|(p, &(k, mu, lambda))| {
            let run = || -> Result<Vec<ResolventSample>> {
                let op = temperature_operator(grid, k, mu)?;
                check_resolvent_op(&op)?;
                let res = Resolvent::new(&op, lambda)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(p as u64));
                (0..trials)
                    .map(|trial| {
                        let f = random_forcing(grid, &mut rng);
                        let theta = res.solve(&f)?;
                        let mut s = sample_from_solution(grid, k, mu, lambda, &f, &theta);
                        s.trial = trial;
                        Ok(s)
                    })
                    .collect()
            };
            run().map_err(|e| SweepFailure {
                k,
                mu,
                lambda,
                message: e.to_string(),
            })
        })
        .collect();
    let mut out = ResolventSweep::default();
    for r in results {
        match r {
            Ok(s) => out.samples.extend(s),
            Err(f) => out.failures.push(f),
        }
    }
    out.samples.sort_by(|a, b| {
        a.k.cmp(&b.k)
            .then(a.mu.total_cmp(&b.mu))
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.trial.cmp(&b.trial))
    });
    out.failures.sort_by(|a, b| {
        a.k.cmp(&b.k)
            .then(a.mu.total_cmp(&b.mu))
            .then(a.lambda.partial_cmp(&b.lambda).unwrap_or(Ordering::Equal))
    });
    Ok(out)
}
