//! Per-mode linearized operators around Couette flow, velocity recovery from
//! vorticity, and the no-slip compatibility projection.
//!
//! For a horizontal wavenumber `k` the linear part of both transport
//! equations is `-kappa (d^2 - k^2) + i k y`, with `kappa = mu` for the
//! temperature and `kappa = nu` for the vorticity.

use std::sync::Arc;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{apply_real, CMatrix, CVector, ChebGrid, HelmholtzSolver, ModeField};

/// Default upper bound on `nu` and `mu`.
pub const DEFAULT_PARAM_CAP: f64 = 1.0;

/// Default largest `|k|` accepted by the compatibility projection.
pub const DEFAULT_K_CAP: i32 = 32;

/// Viscosity and thermal diffusivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidParams {
    pub nu: f64,
    pub mu: f64,
}

impl FluidParams {
    pub fn new(nu: f64, mu: f64) -> Result<Self> {
        Self::with_cap(nu, mu, DEFAULT_PARAM_CAP)
    }

    pub fn with_cap(nu: f64, mu: f64, cap: f64) -> Result<Self> {
        for (name, v) in [("nu", nu), ("mu", mu)] {
            if !(v > 0.0 && v <= cap) {
                return Err(LabError::Config(format!(
                    "{name} = {v} must lie in (0, {cap}]"
                )));
            }
        }
        Ok(Self { nu, mu })
    }

    /// Both coefficients zero: pure transport, used for conservation checks.
    /// The vorticity then only obeys impermeability at the walls.
    pub fn inviscid() -> Self {
        Self { nu: 0.0, mu: 0.0 }
    }

    pub fn is_inviscid(&self) -> bool {
        self.nu == 0.0
    }

    pub fn min(&self) -> f64 {
        self.nu.min(self.mu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Temperature,
    Vorticity,
}

/// Dense collocation matrix of `-kappa (d^2 - k^2) + i k y` for one mode.
///
/// Temperature operators carry identity rows at `y = +-1` (homogeneous
/// Dirichlet data). Vorticity operators leave the boundary rows empty; the
/// wall closure comes from the influence-matrix step.
#[derive(Debug, Clone)]
pub struct ModeOperator {
    pub k: i32,
    pub kind: OperatorKind,
    pub diffusivity: f64,
    pub matrix: CMatrix,
    grid: Arc<ChebGrid>,
}

impl ModeOperator {
    pub fn grid(&self) -> &Arc<ChebGrid> {
        &self.grid
    }

    /// Block acting on the interior unknowns once the Dirichlet values are
    /// eliminated.
    pub fn interior_matrix(&self) -> CMatrix {
        let n = self.grid.n();
        self.matrix.view((1, 1), (n - 2, n - 2)).into_owned()
    }

    /// Matrix-vector product, boundary rows included.
    pub fn apply(&self, v: &CVector) -> CVector {
        &self.matrix * v
    }
}

/// The interior rows of `-kappa (d^2 - k^2) + i k y` as a full n x n matrix
/// with zero boundary rows.
pub(crate) fn transport_diffusion_matrix(grid: &ChebGrid, k: i32, kappa: f64) -> CMatrix {
    let n = grid.n();
    let kf = k as f64;
    let d2 = grid.d2();
    let y = grid.nodes();
    let mut m = CMatrix::zeros(n, n);
    for i in 1..n - 1 {
        for j in 0..n {
            m[(i, j)] = Complex64::new(-kappa * d2[(i, j)], 0.0);
        }
        m[(i, i)] += Complex64::new(kappa * kf * kf, kf * y[i]);
    }
    m
}

pub fn assemble_mode_operator(
    grid: &Arc<ChebGrid>,
    k: i32,
    params: &FluidParams,
    kind: OperatorKind,
) -> ModeOperator {
    let kappa = match kind {
        OperatorKind::Temperature => params.mu,
        OperatorKind::Vorticity => params.nu,
    };
    let mut matrix = transport_diffusion_matrix(grid, k, kappa);
    if kind == OperatorKind::Temperature {
        let n = grid.n();
        matrix[(0, 0)] = Complex64::new(1.0, 0.0);
        matrix[(n - 1, n - 1)] = Complex64::new(1.0, 0.0);
    }
    ModeOperator {
        k,
        kind,
        diffusivity: kappa,
        matrix,
        grid: Arc::clone(grid),
    }
}

/// `e^{k(y-1)}` and `e^{-k(y+1)}`: the homogeneous solutions of
/// `(d^2 - k^2) h = 0`, each scaled to peak at one on its own wall.
pub(crate) fn wall_exponentials(grid: &ChebGrid, k: i32) -> [CVector; 2] {
    let kf = (k as f64).abs();
    [
        grid.sample_real(|y| (kf * (y - 1.0)).exp()),
        grid.sample_real(|y| (-kf * (y + 1.0)).exp()),
    ]
}

/// Inner products of `w` with the two wall exponentials, each normalized by
/// the norms of both factors.
pub fn compatibility_defect(grid: &ChebGrid, k: i32, w: &ModeField) -> (f64, f64) {
    let [up, down] = wall_exponentials(grid, k);
    let wn = grid.l2(&w.values).max(f64::MIN_POSITIVE);
    let a = grid.inner(&w.values, &up).norm() / (wn * grid.l2(&up));
    let b = grid.inner(&w.values, &down).norm() / (wn * grid.l2(&down));
    (a, b)
}

/// Remove from `w` its quadrature-orthogonal component in
/// `span{e^{ky}, e^{-ky}}`.
pub fn compatibility_projection(grid: &ChebGrid, k: i32, w: &ModeField) -> Result<ModeField> {
    compatibility_projection_capped(grid, k, w, DEFAULT_K_CAP)
}

pub fn compatibility_projection_capped(
    grid: &ChebGrid,
    k: i32,
    w: &ModeField,
    k_cap: i32,
) -> Result<ModeField> {
    grid.check_len(w.len())?;
    if k == 0 {
        return Err(LabError::Config(
            "compatibility projection needs k != 0".into(),
        ));
    }
    if k.abs() > k_cap {
        return Err(LabError::WavenumberCap { k, cap: k_cap });
    }
    let basis = wall_exponentials(grid, k);
    let gram = Matrix2::from_fn(|i, j| grid.inner(&basis[j], &basis[i]).re);
    let inv = gram
        .try_inverse()
        .ok_or(LabError::Singular("compatibility Gram matrix"))?;
    let proj = [
        grid.inner(&w.values, &basis[0]),
        grid.inner(&w.values, &basis[1]),
    ];
    let mut out = w.values.clone();
    for (i, b) in basis.iter().enumerate() {
        let coeff = proj[0] * inv[(i, 0)] + proj[1] * inv[(i, 1)];
        out -= b * coeff;
    }
    Ok(ModeField::new(w.k, out))
}

/// Velocity recovered from one vorticity mode.
#[derive(Debug, Clone)]
pub struct VelocityRecovery {
    pub u1: ModeField,
    pub u2: ModeField,
    /// Wall values `|u1(1)|`, `|u1(-1)|`; nonzero when the vorticity is not
    /// compatible with no-slip.
    pub noslip_residual: (f64, f64),
}

/// Solve `(d^2 - k^2) psi = w`, `psi(+-1) = 0` and return
/// `u1 = d psi`, `u2 = -i k psi`.
///
/// For `k = 0` the mean flow is `u1(y) = int_{-1}^{y} w`, so `u1(-1) = 0`
/// and the value at `y = 1` is the residual.
pub fn velocity_from_vorticity(grid: &ChebGrid, k: i32, w: &ModeField) -> Result<VelocityRecovery> {
    grid.check_len(w.len())?;
    let n = grid.n();
    if k == 0 {
        let u1 = mean_velocity_from_vorticity(grid, &w.values)?;
        let residual = u1[0].norm();
        return Ok(VelocityRecovery {
            u1: ModeField::new(0, u1),
            u2: ModeField::zeros(0, n),
            noslip_residual: (residual, 0.0),
        });
    }
    let solver = HelmholtzSolver::new(grid, k as f64)?;
    let zero = Complex64::new(0.0, 0.0);
    let psi = solver.solve(&w.values, zero, zero);
    Ok(velocity_from_streamfunction(grid, k, &psi))
}

pub(crate) fn velocity_from_streamfunction(grid: &ChebGrid, k: i32, psi: &CVector) -> VelocityRecovery {
    let n = grid.n();
    let u1 = grid.diff(psi);
    let u2 = psi * Complex64::new(0.0, -(k as f64));
    let residual = (u1[0].norm(), u1[n - 1].norm());
    VelocityRecovery {
        u1: ModeField::new(k, u1),
        u2: ModeField::new(k, u2),
        noslip_residual: residual,
    }
}

/// `d u = w` with `u(-1) = 0`, by replacing the last row of `d1`.
fn mean_velocity_from_vorticity(grid: &ChebGrid, w: &CVector) -> Result<CVector> {
    let n = grid.n();
    let mut a = grid.d1().clone();
    a.row_mut(n - 1).fill(0.0);
    a[(n - 1, n - 1)] = 1.0;
    let lu = a.lu();
    let mut b = nalgebra::DMatrix::<f64>::zeros(n, 2);
    for i in 0..n - 1 {
        b[(i, 0)] = w[i].re;
        b[(i, 1)] = w[i].im;
    }
    let x = lu
        .solve(&b)
        .ok_or(LabError::Singular("mean-flow integration"))?;
    Ok(CVector::from_fn(n, |i, _| Complex64::new(x[(i, 0)], x[(i, 1)])))
}

/// `w = d u1 - i k u2` at every node.
pub fn vorticity_from_velocity(grid: &ChebGrid, k: i32, u1: &CVector, u2: &CVector) -> CVector {
    apply_real(grid.d1(), u1) - u2 * Complex64::new(0.0, k as f64)
}
