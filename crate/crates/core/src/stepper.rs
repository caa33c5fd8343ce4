//! Crank-Nicolson propagators for single Fourier modes.
//!
//! Both propagators advance `d_t f + L f = s` with
//! `L = -kappa (d^2 - k^2) + i k y` treated fully implicitly (trapezoidal
//! rule) and a source `s` supplied at the half step.
//!
//! The vorticity has no boundary condition of its own. [`VorticityCn`] closes
//! it with the influence-matrix method: a provisional solve with zero wall
//! vorticity is corrected by the two discrete homogeneous solutions so that
//! the stream function satisfies `psi = d psi = 0` at both walls at the new
//! time level.

use nalgebra::{Dyn, Matrix2, LU};
use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::grid::{CMatrix, CVector, ChebGrid, HelmholtzSolver};
use crate::operators::transport_diffusion_matrix;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `I + dt/2 L` and `I - dt/2 L` over the interior rows.
fn trapezoid_pair(grid: &ChebGrid, k: i32, kappa: f64, dt: f64) -> (CMatrix, CMatrix) {
    let n = grid.n();
    let l = transport_diffusion_matrix(grid, k, kappa);
    let half = Complex64::new(0.5 * dt, 0.0);
    let mut implicit = &l * half;
    let mut explicit = &l * (-half);
    for i in 0..n {
        implicit[(i, i)] += ONE;
        explicit[(i, i)] += ONE;
    }
    (implicit, explicit)
}

/// Trapezoidal propagator with homogeneous Dirichlet data at both walls.
#[derive(Debug, Clone)]
pub struct DirichletCn {
    k: i32,
    dt: f64,
    lu: LU<Complex64, Dyn, Dyn>,
    explicit: CMatrix,
}

impl DirichletCn {
    pub fn new(grid: &ChebGrid, k: i32, kappa: f64, dt: f64) -> Result<Self> {
        let n = grid.n();
        let (mut implicit, mut explicit) = trapezoid_pair(grid, k, kappa, dt);
        for &b in &[0, n - 1] {
            implicit.row_mut(b).fill(ZERO);
            implicit[(b, b)] = ONE;
            explicit.row_mut(b).fill(ZERO);
        }
        let lu = implicit.lu();
        if !lu.is_invertible() {
            return Err(LabError::Singular("Crank-Nicolson temperature operator"));
        }
        Ok(Self {
            k,
            dt,
            lu,
            explicit,
        })
    }

    pub fn k(&self) -> i32 {
        self.k
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One step; `source` is the right-hand side at the half step. Its
    /// boundary entries are ignored.
    pub fn step(&self, field: &CVector, source: Option<&CVector>) -> CVector {
        let n = field.len();
        let mut rhs = &self.explicit * field;
        if let Some(s) = source {
            for i in 1..n - 1 {
                rhs[i] += s[i] * self.dt;
            }
        }
        rhs[0] = ZERO;
        rhs[n - 1] = ZERO;
        self.lu.solve(&rhs).expect("factorization checked")
    }
}

#[derive(Debug, Clone)]
struct Influence {
    omega: [CVector; 2],
    psi: [CVector; 2],
    inverse: Matrix2<Complex64>,
}

/// Result of one vorticity step.
#[derive(Debug, Clone)]
pub struct VorticityUpdate {
    pub omega: CVector,
    pub psi: CVector,
}

/// Trapezoidal vorticity propagator with the no-slip wall closure.
///
/// With zero viscosity the closure degenerates: the vorticity is advected
/// pointwise and only impermeability `psi(+-1) = 0` is imposed.
#[derive(Debug, Clone)]
pub struct VorticityCn {
    k: i32,
    dt: f64,
    lu: LU<Complex64, Dyn, Dyn>,
    explicit: CMatrix,
    helmholtz: HelmholtzSolver,
    influence: Option<Influence>,
}

impl VorticityCn {
    pub fn new(grid: &ChebGrid, k: i32, nu: f64, dt: f64) -> Result<Self> {
        if k == 0 {
            return Err(LabError::Config(
                "vorticity propagator is for k != 0; the mean flow is advanced as a velocity"
                    .into(),
            ));
        }
        let n = grid.n();
        let (mut implicit, mut explicit) = trapezoid_pair(grid, k, nu, dt);
        let helmholtz = HelmholtzSolver::new(grid, k as f64)?;
        let y = grid.nodes();
        let kf = k as f64;
        if nu == 0.0 {
            // pure advection at the wall nodes as well
            for &b in &[0, n - 1] {
                let adv = Complex64::new(0.0, 0.5 * dt * kf * y[b]);
                implicit[(b, b)] = ONE + adv;
                explicit[(b, b)] = ONE - adv;
            }
            let lu = implicit.lu();
            if !lu.is_invertible() {
                return Err(LabError::Singular("inviscid vorticity operator"));
            }
            return Ok(Self {
                k,
                dt,
                lu,
                explicit,
                helmholtz,
                influence: None,
            });
        }
        for &b in &[0, n - 1] {
            implicit.row_mut(b).fill(ZERO);
            implicit[(b, b)] = ONE;
            explicit.row_mut(b).fill(ZERO);
        }
        let lu = implicit.lu();
        if !lu.is_invertible() {
            return Err(LabError::Singular("Crank-Nicolson vorticity operator"));
        }
        let homogeneous = |wall: usize| {
            let mut e = CVector::zeros(n);
            e[wall] = ONE;
            let omega = lu.solve(&e).expect("factorization checked");
            let psi = helmholtz.solve(&omega, ZERO, ZERO);
            (omega, psi)
        };
        let (omega_top, psi_top) = homogeneous(0);
        let (omega_bottom, psi_bottom) = homogeneous(n - 1);
        let slope = |psi: &CVector, row: usize| -> Complex64 {
            grid.d1()
                .row(row)
                .iter()
                .zip(psi.iter())
                .map(|(d, p)| p * *d)
                .sum()
        };
        let q = Matrix2::new(
            slope(&psi_top, 0),
            slope(&psi_bottom, 0),
            slope(&psi_top, n - 1),
            slope(&psi_bottom, n - 1),
        );
        let inverse = q
            .try_inverse()
            .ok_or(LabError::Singular("influence matrix"))?;
        Ok(Self {
            k,
            dt,
            lu,
            explicit,
            helmholtz,
            influence: Some(Influence {
                omega: [omega_top, omega_bottom],
                psi: [psi_top, psi_bottom],
                inverse,
            }),
        })
    }

    pub fn k(&self) -> i32 {
        self.k
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One step; `source` is the half-step right-hand side (interior rows).
    pub fn step(&self, grid: &ChebGrid, omega: &CVector, source: Option<&CVector>) -> VorticityUpdate {
        let n = omega.len();
        let mut rhs = &self.explicit * omega;
        if let Some(s) = source {
            let range = if self.influence.is_some() {
                1..n - 1
            } else {
                0..n
            };
            for i in range {
                rhs[i] += s[i] * self.dt;
            }
        }
        if self.influence.is_some() {
            rhs[0] = ZERO;
            rhs[n - 1] = ZERO;
        }
        let mut w = self.lu.solve(&rhs).expect("factorization checked");
        let mut psi = self.helmholtz.solve(&w, ZERO, ZERO);
        if let Some(inf) = &self.influence {
            let d1 = grid.d1();
            let slope = |row: usize| -> Complex64 {
                d1.row(row).iter().zip(psi.iter()).map(|(d, p)| p * *d).sum()
            };
            let defect = nalgebra::Vector2::new(-slope(0), -slope(n - 1));
            let coeff = inf.inverse * defect;
            for j in 0..2 {
                w += &inf.omega[j] * coeff[j];
                psi += &inf.psi[j] * coeff[j];
            }
        }
        VorticityUpdate { omega: w, psi }
    }
}
