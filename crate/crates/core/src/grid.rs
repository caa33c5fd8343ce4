//! Chebyshev collocation on the wall-normal interval (-1, 1).
//!
//! A [`ChebGrid`] holds the Gauss-Lobatto nodes (descending, `y_0 = 1`), the
//! dense first and second differentiation matrices, and Clenshaw-Curtis
//! weights on the same nodes. Everything else in the crate represents
//! functions of `y` by their node values ([`ModeField`]) and integrates with
//! these weights.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Dim, Dyn, Matrix, RawStorage, LU};
use num_complex::Complex64;

use crate::error::{LabError, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// Smallest node count accepted by [`ChebGrid::new`].
pub const MIN_NODES: usize = 8;

/// Chebyshev-Gauss-Lobatto points `cos(j pi / (n - 1))`, `j = 0..n`.
pub fn chebyshev_nodes(n: usize) -> Vec<f64> {
    assert!(n >= 2, "need at least two nodes");
    let m = (n - 1) as f64;
    (0..n)
        .map(|j| {
            // sin form is exactly antisymmetric about the midpoint
            (PI * (m - 2.0 * j as f64) / (2.0 * m)).sin()
        })
        .collect()
}

/// Clenshaw-Curtis weights on the Gauss-Lobatto points.
fn clenshaw_curtis_weights(n: usize) -> Vec<f64> {
    let m = n - 1;
    let mf = m as f64;
    let mut w = vec![0.0; n];
    let mut v = vec![1.0; n.saturating_sub(2)];
    if m % 2 == 0 {
        w[0] = 1.0 / (mf * mf - 1.0);
        w[m] = w[0];
        for k in 1..m / 2 {
            let kf = k as f64;
            for (i, vi) in v.iter_mut().enumerate() {
                let theta = PI * (i + 1) as f64 / mf;
                *vi -= 2.0 * (2.0 * kf * theta).cos() / (4.0 * kf * kf - 1.0);
            }
        }
        for (i, vi) in v.iter_mut().enumerate() {
            let theta = PI * (i + 1) as f64 / mf;
            *vi -= (mf * theta).cos() / (mf * mf - 1.0);
        }
    } else {
        w[0] = 1.0 / (mf * mf);
        w[m] = w[0];
        for k in 1..=(m - 1) / 2 {
            let kf = k as f64;
            for (i, vi) in v.iter_mut().enumerate() {
                let theta = PI * (i + 1) as f64 / mf;
                *vi -= 2.0 * (2.0 * kf * theta).cos() / (4.0 * kf * kf - 1.0);
            }
        }
    }
    for (i, vi) in v.iter().enumerate() {
        w[i + 1] = 2.0 * vi / mf;
    }
    w
}

/// First-derivative matrix from the trigonometric node-difference formula,
/// with the diagonal set by the negative-sum rule.
fn first_derivative_matrix(n: usize) -> DMatrix<f64> {
    let m = (n - 1) as f64;
    let c = |i: usize| {
        let base = if i == 0 || i == n - 1 { 2.0 } else { 1.0 };
        if i % 2 == 0 {
            base
        } else {
            -base
        }
    };
    let mut d = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            // y_i - y_j = -2 sin((i+j) pi / 2m) sin((i-j) pi / 2m)
            let diff = -2.0
                * (PI * (i + j) as f64 / (2.0 * m)).sin()
                * (PI * (i as f64 - j as f64) / (2.0 * m)).sin();
            d[(i, j)] = c(i) / c(j) / diff;
        }
    }
    negative_sum_diagonal(&mut d);
    d
}

fn negative_sum_diagonal(d: &mut DMatrix<f64>) {
    let n = d.nrows();
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            if j != i {
                s += d[(i, j)];
            }
        }
        d[(i, i)] = -s;
    }
}

/// Largest entry modulus of a complex matrix or vector.
pub trait MaxAbs {
    fn max_abs(&self) -> f64;
}

impl<R: Dim, C: Dim, S: RawStorage<Complex64, R, C>> MaxAbs for Matrix<Complex64, R, C, S> {
    fn max_abs(&self) -> f64 {
        self.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Real matrix times complex vector.
pub fn apply_real(m: &DMatrix<f64>, v: &CVector) -> CVector {
    let (rows, cols) = m.shape();
    let mut out = CVector::zeros(rows);
    for j in 0..cols {
        let vj = v[j];
        if vj == Complex64::new(0.0, 0.0) {
            continue;
        }
        let col = m.column(j);
        for i in 0..rows {
            out[i] += vj * col[i];
        }
    }
    out
}

/// Collocation grid with differentiation matrices and quadrature weights.
#[derive(Debug)]
pub struct ChebGrid {
    n: usize,
    nodes: Vec<f64>,
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
    weights: Vec<f64>,
    riesz: OnceLock<HelmholtzSolver>,
}

impl ChebGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_NODES {
            return Err(LabError::GridTooCoarse(n));
        }
        let nodes = chebyshev_nodes(n);
        let d1 = first_derivative_matrix(n);
        let mut d2 = &d1 * &d1;
        negative_sum_diagonal(&mut d2);
        let weights = clenshaw_curtis_weights(n);
        Ok(Self {
            n,
            nodes,
            d1,
            d2,
            weights,
            riesz: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn d1(&self) -> &DMatrix<f64> {
        &self.d1
    }

    pub fn d2(&self) -> &DMatrix<f64> {
        &self.d2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Node values of `f(y)`.
    pub fn sample<F: Fn(f64) -> Complex64>(&self, f: F) -> CVector {
        CVector::from_iterator(self.n, self.nodes.iter().map(|&y| f(y)))
    }

    /// Node values of a real function.
    pub fn sample_real<F: Fn(f64) -> f64>(&self, f: F) -> CVector {
        self.sample(|y| Complex64::new(f(y), 0.0))
    }

    pub fn diff(&self, v: &CVector) -> CVector {
        apply_real(&self.d1, v)
    }

    pub fn diff2(&self, v: &CVector) -> CVector {
        apply_real(&self.d2, v)
    }

    /// Quadrature inner product `sum_j w_j f_j conj(g_j)`.
    pub fn inner(&self, f: &CVector, g: &CVector) -> Complex64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g.iter()))
            .map(|(&w, (a, b))| a * b.conj() * w)
            .sum()
    }

    /// Unweighted quadrature L2 norm of raw node values.
    pub fn l2(&self, v: &CVector) -> f64 {
        self.weights
            .iter()
            .zip(v.iter())
            .map(|(&w, a)| w * a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Integral over (-1, 1) of node values.
    pub fn integrate(&self, v: &CVector) -> Complex64 {
        self.weights.iter().zip(v.iter()).map(|(&w, a)| a * w).sum()
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(LabError::Shape {
                expected: self.n,
                found: len,
            });
        }
        Ok(())
    }

    /// Dirichlet solver for `(1 - d^2) w = f`, built once per grid.
    pub(crate) fn riesz_solver(&self) -> &HelmholtzSolver {
        self.riesz.get_or_init(|| {
            HelmholtzSolver::with_shift(self, 1.0).expect("Riesz operator is nonsingular")
        })
    }
}

/// `build_grid` in operation form.
pub fn build_grid(n: usize) -> Result<ChebGrid> {
    ChebGrid::new(n)
}

/// Node values of one horizontal Fourier mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeField {
    pub k: i32,
    pub values: CVector,
}

impl ModeField {
    pub fn new(k: i32, values: CVector) -> Self {
        Self { k, values }
    }

    pub fn zeros(k: i32, n: usize) -> Self {
        Self {
            k,
            values: CVector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            k: self.k,
            values: &self.values * Complex64::new(s, 0.0),
        }
    }

    /// The mirror mode at `-k` that makes the physical field real.
    pub fn conjugate_mode(&self) -> Self {
        Self {
            k: -self.k,
            values: self.values.map(|z| z.conj()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// `(sum_j w_j * weight(y_j) * |f_j|^2)^(1/2)`.
pub fn weighted_l2_norm(
    grid: &ChebGrid,
    f: &ModeField,
    weight: Option<&dyn Fn(f64) -> f64>,
) -> Result<f64> {
    grid.check_len(f.len())?;
    Ok(weighted_norm_values(grid, &f.values, weight))
}

pub(crate) fn weighted_norm_values(
    grid: &ChebGrid,
    v: &CVector,
    weight: Option<&dyn Fn(f64) -> f64>,
) -> f64 {
    match weight {
        None => grid.l2(v),
        Some(w) => grid
            .weights
            .iter()
            .zip(grid.nodes.iter())
            .zip(v.iter())
            .map(|((&q, &y), a)| q * w(y) * a.norm_sqr())
            .sum::<f64>()
            .sqrt(),
    }
}

/// Distance to the nearest wall, `1 - |y|`.
pub fn wall_weight(y: f64) -> f64 {
    1.0 - y.abs()
}

/// Dirichlet solver for `(d^2 - s) u = r` with the boundary rows replaced.
#[derive(Debug, Clone)]
pub struct HelmholtzSolver {
    shift: f64,
    lu: LU<f64, Dyn, Dyn>,
}

impl HelmholtzSolver {
    /// Operator `d^2 - k^2`.
    pub fn new(grid: &ChebGrid, k: f64) -> Result<Self> {
        Self::with_shift(grid, k * k)
    }

    fn with_shift(grid: &ChebGrid, shift: f64) -> Result<Self> {
        let n = grid.n;
        let mut a = grid.d2.clone();
        for i in 0..n {
            a[(i, i)] -= shift;
        }
        for &row in &[0, n - 1] {
            a.row_mut(row).fill(0.0);
            a[(row, row)] = 1.0;
        }
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(LabError::Singular("Helmholtz operator"));
        }
        Ok(Self { shift, lu })
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Solve with `u(1) = top`, `u(-1) = bottom`.
    pub fn solve(&self, rhs: &CVector, top: Complex64, bottom: Complex64) -> CVector {
        let n = rhs.len();
        let mut b = DMatrix::<f64>::zeros(n, 2);
        for i in 1..n - 1 {
            b[(i, 0)] = rhs[i].re;
            b[(i, 1)] = rhs[i].im;
        }
        b[(0, 0)] = top.re;
        b[(0, 1)] = top.im;
        b[(n - 1, 0)] = bottom.re;
        b[(n - 1, 1)] = bottom.im;
        let x = self
            .lu
            .solve(&b)
            .expect("invertibility checked at construction");
        CVector::from_fn(n, |i, _| Complex64::new(x[(i, 0)], x[(i, 1)]))
    }
}

/// `(d^2 - k^2) u = rhs` in the interior with `u(1) = bc.0`, `u(-1) = bc.1`.
pub fn solve_helmholtz(
    grid: &ChebGrid,
    k: i32,
    rhs: &ModeField,
    bc: (Complex64, Complex64),
) -> Result<ModeField> {
    grid.check_len(rhs.len())?;
    let solver = HelmholtzSolver::new(grid, k as f64)?;
    Ok(ModeField::new(k, solver.solve(&rhs.values, bc.0, bc.1)))
}

/// Norm of `f` in the dual of `H^1_0`: `||w||_{H^1}` for the Riesz
/// representative `(1 - d^2) w = f`, `w(+-1) = 0`.
pub fn hminus1_norm(grid: &ChebGrid, f: &ModeField) -> Result<f64> {
    grid.check_len(f.len())?;
    Ok(hminus1_values(grid, &f.values))
}

pub(crate) fn hminus1_values(grid: &ChebGrid, f: &CVector) -> f64 {
    let zero = Complex64::new(0.0, 0.0);
    // (d^2 - 1) w = -f
    let w = grid.riesz_solver().solve(&(-f), zero, zero);
    let dw = grid.diff(&w);
    (grid.l2(&w).powi(2) + grid.l2(&dw).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn three_nodes_are_one_zero_minus_one() {
        let y = chebyshev_nodes(3);
        assert_eq!(y[0], 1.0);
        assert!(y[1].abs() < 1e-16);
        assert_eq!(y[2], -1.0);
    }

    #[test]
    fn rejects_coarse_grids() {
        assert!(matches!(ChebGrid::new(7), Err(LabError::GridTooCoarse(7))));
        assert!(ChebGrid::new(8).is_ok());
    }

    #[test]
    fn nodes_descend_from_one_to_minus_one() {
        for n in [8, 9, 33, 64] {
            let g = ChebGrid::new(n).unwrap();
            let y = g.nodes();
            assert_eq!(y[0], 1.0);
            assert_eq!(y[n - 1], -1.0);
            assert!(y.windows(2).all(|p| p[0] > p[1]));
        }
    }

    #[test]
    fn weights_sum_to_two() {
        for n in [8, 9, 16, 33, 128, 257] {
            let g = ChebGrid::new(n).unwrap();
            let s: f64 = g.weights().iter().sum();
            assert!((s - 2.0).abs() <= 1e-12, "n={n}: {s}");
        }
    }

    #[test]
    fn d1_of_y_squared() {
        let g = ChebGrid::new(16).unwrap();
        let f = g.sample_real(|y| y * y);
        let df = g.diff(&f);
        let exact = g.sample_real(|y| 2.0 * y);
        assert!((df - exact).max_abs() <= 1e-12);
    }

    #[test]
    fn d1_exact_on_top_degree_polynomial() {
        for n in [8, 17, 32] {
            let g = ChebGrid::new(n).unwrap();
            let deg = (n - 1) as i32;
            let f = g.sample_real(|y| y.powi(deg) - 0.5 * y.powi(deg - 2) + y);
            let exact = g.sample_real(|y| {
                deg as f64 * y.powi(deg - 1) - 0.5 * (deg - 2) as f64 * y.powi(deg - 3) + 1.0
            });
            let err = (g.diff(&f) - &exact).max_abs() / exact.max_abs();
            assert!(err <= 1e-10, "n={n}: {err}");
        }
    }

    #[test]
    fn spectral_accuracy_on_sine() {
        let err_at = |n: usize| {
            let g = ChebGrid::new(n).unwrap();
            let f = g.sample_real(|y| (PI * y).sin());
            let exact = g.sample_real(|y| PI * (PI * y).cos());
            (g.diff(&f) - exact).max_abs()
        };
        // decreasing until the rounding plateau (reached near n = 24)
        let errs: Vec<f64> = [8, 10, 12, 14, 16, 18].into_iter().map(err_at).collect();
        assert!(errs.windows(2).all(|p| p[1] < p[0]), "{errs:?}");
        assert!(err_at(32) <= 1e-8);
    }

    #[test]
    fn weighted_norm_examples() {
        let g = ChebGrid::new(33).unwrap();
        let one = ModeField::new(0, g.sample_real(|_| 1.0));
        let y = ModeField::new(0, g.sample_real(|y| y));
        assert!((weighted_l2_norm(&g, &one, None).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        // 1 - |y| has a kink at 0, so the quadrature is only algebraically accurate
        let w = weighted_l2_norm(&g, &one, Some(&wall_weight)).unwrap();
        assert!((w - 1.0).abs() < 1e-3, "{w}");
        assert!((weighted_l2_norm(&g, &y, None).unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn weighted_norm_shape_mismatch() {
        let g = ChebGrid::new(16).unwrap();
        let f = ModeField::zeros(0, 15);
        assert!(matches!(
            weighted_l2_norm(&g, &f, None),
            Err(LabError::Shape { .. })
        ));
    }

    #[test]
    fn helmholtz_parabola() {
        let g = ChebGrid::new(32).unwrap();
        let rhs = ModeField::new(0, g.sample_real(|_| -1.0));
        let u = solve_helmholtz(&g, 0, &rhs, (c(0.0), c(0.0))).unwrap();
        let exact = g.sample_real(|y| 0.5 * (1.0 - y * y));
        assert!((u.values - exact).max_abs() <= 1e-10);
    }

    #[test]
    fn helmholtz_cosh() {
        let g = ChebGrid::new(64).unwrap();
        let rhs = ModeField::new(2, g.sample_real(|_| -4.0));
        let u = solve_helmholtz(&g, 2, &rhs, (c(0.0), c(0.0))).unwrap();
        let exact = g.sample_real(|y| 1.0 - (2.0 * y).cosh() / 2f64.cosh());
        assert!((u.values - exact).max_abs() <= 1e-9);
    }

    #[test]
    fn helmholtz_zero_rhs_and_boundary_values() {
        let g = ChebGrid::new(24).unwrap();
        let u = solve_helmholtz(&g, 3, &ModeField::zeros(3, 24), (c(0.0), c(0.0))).unwrap();
        assert_eq!(u.values.max_abs(), 0.0);
        let u = solve_helmholtz(&g, 0, &ModeField::zeros(0, 24), (c(1.0), c(-1.0))).unwrap();
        let exact = g.sample_real(|y| y);
        assert!((u.values - exact).max_abs() < 1e-12);
    }

    #[test]
    fn hminus1_of_zero_and_scaling() {
        let g = ChebGrid::new(32).unwrap();
        assert_eq!(hminus1_norm(&g, &ModeField::zeros(0, 32)).unwrap(), 0.0);
        let f = ModeField::new(0, g.sample_real(|y| (3.0 * y).sin() + y * y));
        let a = hminus1_norm(&g, &f).unwrap();
        let b = hminus1_norm(&g, &f.scaled(7.5)).unwrap();
        assert!((b - 7.5 * a).abs() <= 1e-12 * b);
    }
}
