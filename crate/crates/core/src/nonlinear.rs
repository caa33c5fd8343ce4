//! Pseudo-spectral simulation of the full perturbation system.
//!
//! Fourier modes `-k_max..=k_max` in `x`, Chebyshev collocation in `y`. The
//! linear part (diffusion, Couette transport `i k y`, buoyancy) is advanced
//! by the trapezoidal rule, quadratic fluxes by second-order Adams-Bashforth
//! (forward Euler on the first step). Fluxes are formed in physical `x`
//! space on a 3/2-padded grid.
//!
//! Per mode `k != 0`:
//!
//! ```text
//! (d_t - nu (d^2 - k^2) + i k y) w_k = -i k T_k - i k f1_k - d f2_k
//! (d_t - mu (d^2 - k^2) + i k y) T_k = -i k g1_k - d g2_k
//! ```
//!
//! and for the mean `d_t u1_0 - nu d^2 u1_0 = -f2_0`,
//! `d_t T_0 - mu d^2 T_0 = -d g2_0`, with `u2_0 = 0`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{apply_real, CVector, ChebGrid, ModeField};
use crate::ledger::EnergyLedger;
use crate::operators::{
    compatibility_projection, velocity_from_streamfunction, velocity_from_vorticity, FluidParams,
    DEFAULT_K_CAP,
};
use crate::stepper::{DirichletCn, VorticityCn};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn mul_ik(v: &CVector, k: i32) -> CVector {
    v * Complex64::new(0.0, k as f64)
}

// ------------------------------------------------------------------ state

/// Perturbation state: vorticity, temperature and velocity per mode.
#[derive(Debug, Clone)]
pub struct ChannelState {
    grid: Arc<ChebGrid>,
    k_max: usize,
    pub time: f64,
    omega: Vec<CVector>,
    theta: Vec<CVector>,
    u1: Vec<CVector>,
    u2: Vec<CVector>,
}

impl ChannelState {
    pub fn zeros(grid: Arc<ChebGrid>, k_max: usize) -> Self {
        let n = grid.n();
        let z = vec![CVector::zeros(n); 2 * k_max + 1];
        Self {
            grid,
            k_max,
            time: 0.0,
            omega: z.clone(),
            theta: z.clone(),
            u1: z.clone(),
            u2: z,
        }
    }

    pub fn grid(&self) -> &Arc<ChebGrid> {
        &self.grid
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    fn idx(&self, k: i32) -> usize {
        assert!(
            k.unsigned_abs() as usize <= self.k_max,
            "wavenumber {k} outside 0..={}",
            self.k_max
        );
        (k + self.k_max as i32) as usize
    }

    pub fn omega(&self, k: i32) -> &CVector {
        &self.omega[self.idx(k)]
    }

    pub fn theta(&self, k: i32) -> &CVector {
        &self.theta[self.idx(k)]
    }

    pub fn u1(&self, k: i32) -> &CVector {
        &self.u1[self.idx(k)]
    }

    pub fn u2(&self, k: i32) -> &CVector {
        &self.u2[self.idx(k)]
    }

    pub fn omega_field(&self, k: i32) -> ModeField {
        ModeField::new(k, self.omega(k).clone())
    }

    pub fn theta_field(&self, k: i32) -> ModeField {
        ModeField::new(k, self.theta(k).clone())
    }

    /// Set mode `k >= 0` (and its conjugate partner) from vorticity and
    /// temperature; the velocity is recovered from the vorticity.
    pub fn set_mode(&mut self, k: i32, omega: CVector, theta: CVector) -> Result<()> {
        self.grid.check_len(omega.len())?;
        self.grid.check_len(theta.len())?;
        if k < 0 {
            return Err(LabError::Config("set modes through k >= 0".into()));
        }
        let vel = velocity_from_vorticity(&self.grid, k, &ModeField::new(k, omega.clone()))?;
        self.store(k, omega, theta, vel.u1.values, vel.u2.values);
        Ok(())
    }

    fn store(&mut self, k: i32, omega: CVector, theta: CVector, u1: CVector, u2: CVector) {
        let i = self.idx(k);
        if k == 0 {
            let re = |v: CVector| v.map(|z| Complex64::new(z.re, 0.0));
            self.omega[i] = re(omega);
            self.theta[i] = re(theta);
            self.u1[i] = re(u1);
            self.u2[i] = CVector::zeros(u2.len());
            return;
        }
        let j = self.idx(-k);
        self.omega[j] = omega.conjugate();
        self.theta[j] = theta.conjugate();
        self.u1[j] = u1.conjugate();
        self.u2[j] = u2.conjugate();
        self.omega[i] = omega;
        self.theta[i] = theta;
        self.u1[i] = u1;
        self.u2[i] = u2;
    }

    /// Largest deviation from `f_{-k} = conj(f_k)` and from a real mean.
    pub fn reality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for fields in [&self.omega, &self.theta, &self.u1, &self.u2] {
            let mid = &fields[self.k_max];
            worst = worst.max(mid.iter().map(|z| z.im.abs()).fold(0.0, f64::max));
            for k in 1..=self.k_max as i32 {
                let a = &fields[self.idx(k)];
                let b = &fields[self.idx(-k)];
                worst = worst.max((a - b.conjugate()).iter().map(|z| z.norm()).fold(0.0, f64::max));
            }
        }
        worst
    }

    /// Largest `L2` norm of any vorticity or temperature mode.
    pub fn max_mode_norm(&self) -> f64 {
        self.omega
            .iter()
            .chain(self.theta.iter())
            .map(|v| self.grid.l2(v))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        [&self.omega, &self.theta, &self.u1, &self.u2]
            .iter()
            .all(|fs| fs.iter().all(|v| v.iter().all(|z| z.re.is_finite() && z.im.is_finite())))
    }

    /// `max |u1(+-1)|` over all modes.
    pub fn noslip_residual(&self) -> f64 {
        let n = self.grid.n();
        self.u1
            .iter()
            .chain(self.u2.iter())
            .map(|u| u[0].norm().max(u[n - 1].norm()))
            .fold(0.0, f64::max)
    }

    /// `||T||_{L2(Omega)}` up to the factor `(2 pi)^{1/2}`.
    pub fn theta_energy(&self) -> f64 {
        self.theta.iter().map(|v| self.grid.l2(v).powi(2)).sum::<f64>().sqrt()
    }

    /// Multiply every field by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        let s = Complex64::new(a, 0.0);
        let sc = |fs: &Vec<CVector>| fs.iter().map(|v| v * s).collect();
        Self {
            grid: Arc::clone(&self.grid),
            k_max: self.k_max,
            time: self.time,
            omega: sc(&self.omega),
            theta: sc(&self.theta),
            u1: sc(&self.u1),
            u2: sc(&self.u2),
        }
    }
}

// ----------------------------------------------------------------- fluxes

/// `f1 = u1 w`, `f2 = u2 w`, `g1 = u1 T`, `g2 = u2 T` per mode, truncated to
/// `|k| <= k_max`.
#[derive(Debug, Clone)]
pub struct NonlinearFluxes {
    k_max: usize,
    pub f1: Vec<CVector>,
    pub f2: Vec<CVector>,
    pub g1: Vec<CVector>,
    pub g2: Vec<CVector>,
    /// `max |u|` over the padded physical grid.
    pub max_speed: f64,
    /// Spacing of the padded physical grid.
    pub dx: f64,
}

impl NonlinearFluxes {
    fn idx(&self, k: i32) -> usize {
        (k + self.k_max as i32) as usize
    }

    pub fn f1(&self, k: i32) -> &CVector {
        &self.f1[self.idx(k)]
    }

    pub fn f2(&self, k: i32) -> &CVector {
        &self.f2[self.idx(k)]
    }

    pub fn g1(&self, k: i32) -> &CVector {
        &self.g1[self.idx(k)]
    }

    pub fn g2(&self, k: i32) -> &CVector {
        &self.g2[self.idx(k)]
    }
}

/// Number of physical points used for products: `ceil(3 (2 k_max + 1) / 2)`.
pub fn padded_size(k_max: usize) -> usize {
    (3 * (2 * k_max + 1)).div_ceil(2)
}

/// Planned transforms for one truncation.
#[derive(Clone)]
pub struct FluxTransform {
    k_max: usize,
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FluxTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FluxTransform")
            .field("k_max", &self.k_max)
            .field("m", &self.m)
            .finish()
    }
}

impl FluxTransform {
    pub fn new(k_max: usize) -> Self {
        let m = padded_size(k_max);
        let mut planner = FftPlanner::new();
        Self {
            k_max,
            m,
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
        }
    }

    pub fn points(&self) -> usize {
        self.m
    }

    pub fn compute(&self, state: &ChannelState) -> NonlinearFluxes {
        assert_eq!(state.k_max(), self.k_max, "transform built for another truncation");
        let n = state.grid().n();
        let km = self.k_max as i32;
        let m = self.m;
        let slot = |k: i32| k.rem_euclid(m as i32) as usize;
        let per_node: Vec<([Vec<Complex64>; 4], f64)> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut phys: Vec<Vec<Complex64>> = vec![vec![ZERO; m]; 4];
                for k in -km..=km {
                    let s = slot(k);
                    phys[0][s] = state.u1(k)[j];
                    phys[1][s] = state.u2(k)[j];
                    phys[2][s] = state.omega(k)[j];
                    phys[3][s] = state.theta(k)[j];
                }
                for buf in phys.iter_mut() {
                    self.inverse.process(buf);
                }
                let speed = phys[0]
                    .iter()
                    .zip(&phys[1])
                    .map(|(a, b)| (a.re * a.re + b.re * b.re).sqrt())
                    .fold(0.0, f64::max);
                let mut prods = [
                    mul(&phys[0], &phys[2]),
                    mul(&phys[1], &phys[2]),
                    mul(&phys[0], &phys[3]),
                    mul(&phys[1], &phys[3]),
                ];
                let scale = 1.0 / m as f64;
                for p in prods.iter_mut() {
                    self.forward.process(p);
                    for z in p.iter_mut() {
                        *z *= scale;
                    }
                }
                (prods, speed)
            })
            .collect();
        let modes = 2 * self.k_max + 1;
        let mut out: Vec<Vec<CVector>> = vec![vec![CVector::zeros(n); modes]; 4];
        let mut max_speed: f64 = 0.0;
        for (j, (prods, speed)) in per_node.iter().enumerate() {
            max_speed = max_speed.max(*speed);
            for (q, p) in prods.iter().enumerate() {
                for k in -km..=km {
                    out[q][(k + km) as usize][j] = p[slot(k)];
                }
            }
        }
        let g2 = out.pop().unwrap();
        let g1 = out.pop().unwrap();
        let f2 = out.pop().unwrap();
        let f1 = out.pop().unwrap();
        NonlinearFluxes {
            k_max: self.k_max,
            f1,
            f2,
            g1,
            g2,
            max_speed,
            dx: 2.0 * std::f64::consts::PI / m as f64,
        }
    }
}

fn mul(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Dealiased quadratic fluxes of `state`.
pub fn compute_fluxes(state: &ChannelState) -> NonlinearFluxes {
    FluxTransform::new(state.k_max()).compute(state)
}

// --------------------------------------------------------------- stepping

/// Largest stable step `0.5 dx / max|u|`, or infinity for a fluid at rest.
pub fn cfl_limit(fluxes: &NonlinearFluxes) -> f64 {
    if fluxes.max_speed > 0.0 {
        0.5 * fluxes.dx / fluxes.max_speed
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone)]
struct ExplicitSources {
    /// `k = 0`: source of `u1_0`; `k > 0`: vorticity source.
    momentum: Vec<CVector>,
    theta: Vec<CVector>,
}

/// Fixed-step IMEX integrator holding the factored per-mode propagators and
/// the flux history.
#[derive(Debug, Clone)]
pub struct Simulator {
    grid: Arc<ChebGrid>,
    k_max: usize,
    params: FluidParams,
    dt: f64,
    nonlinear: bool,
    theta_cn: Vec<DirichletCn>,
    omega_cn: Vec<VorticityCn>,
    mean_cn: DirichletCn,
    transform: FluxTransform,
    history: Option<ExplicitSources>,
}

impl Simulator {
    pub fn new(
        grid: Arc<ChebGrid>,
        k_max: usize,
        params: FluidParams,
        dt: f64,
        nonlinear: bool,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LabError::Config(format!("dt = {dt} must be positive")));
        }
        let theta_cn = (0..=k_max as i32)
            .map(|k| DirichletCn::new(&grid, k, params.mu, dt))
            .collect::<Result<Vec<_>>>()?;
        let omega_cn = (1..=k_max as i32)
            .map(|k| VorticityCn::new(&grid, k, params.nu, dt))
            .collect::<Result<Vec<_>>>()?;
        let mean_cn = DirichletCn::new(&grid, 0, params.nu, dt)?;
        Ok(Self {
            transform: FluxTransform::new(k_max),
            grid,
            k_max,
            params,
            dt,
            nonlinear,
            theta_cn,
            omega_cn,
            mean_cn,
            history: None,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> &FluidParams {
        &self.params
    }

    /// Forget the flux history; the next step uses forward Euler.
    pub fn reset_history(&mut self) {
        self.history = None;
    }

    fn explicit_sources(&self, fl: &NonlinearFluxes) -> ExplicitSources {
        let d1 = self.grid.d1();
        let mut momentum = Vec::with_capacity(self.k_max + 1);
        let mut theta = Vec::with_capacity(self.k_max + 1);
        for k in 0..=self.k_max as i32 {
            theta.push(-mul_ik(fl.g1(k), k) - apply_real(d1, fl.g2(k)));
            if k == 0 {
                momentum.push(-fl.f2(0));
            } else {
                momentum.push(-mul_ik(fl.f1(k), k) - apply_real(d1, fl.f2(k)));
            }
        }
        ExplicitSources { momentum, theta }
    }

    /// Advance `state` by one step.
    pub fn step(&mut self, state: &ChannelState) -> Result<ChannelState> {
        if state.k_max() != self.k_max || state.grid().n() != self.grid.n() {
            return Err(LabError::Shape {
                expected: 2 * self.k_max + 1,
                found: 2 * state.k_max() + 1,
            });
        }
        let current = if self.nonlinear {
            let fl = self.transform.compute(state);
            let limit = cfl_limit(&fl);
            if self.dt > limit {
                return Err(LabError::Cfl {
                    dt: self.dt,
                    suggested: 0.9 * limit,
                });
            }
            Some(self.explicit_sources(&fl))
        } else {
            None
        };
        let blended = current.as_ref().map(|cur| match &self.history {
            None => cur.clone(),
            Some(prev) => {
                let ab = |a: &Vec<CVector>, b: &Vec<CVector>| -> Vec<CVector> {
                    a.iter().zip(b).map(|(x, y)| x * Complex64::new(1.5, 0.0) - y * Complex64::new(0.5, 0.0)).collect()
                };
                ExplicitSources {
                    momentum: ab(&cur.momentum, &prev.momentum),
                    theta: ab(&cur.theta, &prev.theta),
                }
            }
        });
        let grid = &self.grid;
        let dt = self.dt;
        let updated: Vec<(i32, CVector, CVector, CVector, CVector)> = (0..=self.k_max as i32)
            .into_par_iter()
            .map(|k| {
                let ku = k as usize;
                let th_old = state.theta(k);
                let th = self.theta_cn[ku].step(th_old, blended.as_ref().map(|b| &b.theta[ku]));
                if k == 0 {
                    let u = self.mean_cn.step(state.u1(0), blended.as_ref().map(|b| &b.momentum[0]));
                    let w = apply_real(grid.d1(), &u);
                    let n = u.len();
                    return (0, w, th, u, CVector::zeros(n));
                }
                let buoyancy = mul_ik(&(&th + th_old), k) * Complex64::new(-0.5, 0.0);
                let src = match &blended {
                    Some(b) => &b.momentum[ku] + &buoyancy,
                    None => buoyancy,
                };
                let up = self.omega_cn[ku - 1].step(grid, state.omega(k), Some(&src));
                let vel = velocity_from_streamfunction(grid, k, &up.psi);
                (k, up.omega, th, vel.u1.values, vel.u2.values)
            })
            .collect();
        let mut next = ChannelState::zeros(Arc::clone(&self.grid), self.k_max);
        next.time = state.time + dt;
        for (k, w, th, u1, u2) in updated {
            next.store(k, w, th, u1, u2);
        }
        self.history = current;
        Ok(next)
    }
}

/// One step from rest history (forward Euler for the fluxes).
pub fn step(state: &ChannelState, params: &FluidParams, dt: f64) -> Result<ChannelState> {
    Simulator::new(Arc::clone(state.grid()), state.k_max(), *params, dt, true)?.step(state)
}

// ---------------------------------------------------------- initial data

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityProfile {
    /// Stream function `(1 - y^2)^2`.
    Quartic,
    /// Stream function `y (1 - y^2)^2`.
    QuarticOdd,
    /// Stream function `(1 - y^2)^2 p(y)` with a seeded random cubic `p`.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanProfile {
    /// `u1_0 = 1 - y^2`.
    Parabola,
    /// `u1_0 = sin(pi y)`.
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaProfile {
    /// `1 - y^2`.
    Parabola,
    /// `sin(pi (y + 1) / 2)`.
    Sine,
    /// `y (1 - y^2)`.
    Odd,
    /// `(1 - y^2) p(y)` with a seeded random cubic `p`.
    Random,
}

/// Complex weight of one Fourier mode in the initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeWeight {
    pub k: i32,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl ModeWeight {
    fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

fn default_velocity_modes() -> Vec<ModeWeight> {
    vec![ModeWeight { k: 1, re: 1.0, im: 0.0 }]
}

fn default_theta_modes() -> Vec<ModeWeight> {
    vec![ModeWeight { k: 1, re: 1.0, im: 0.0 }]
}

fn default_velocity_profile() -> VelocityProfile {
    VelocityProfile::Quartic
}

fn default_theta_profile() -> ThetaProfile {
    ThetaProfile::Parabola
}

/// Shapes and relative weights of the initial data. The overall size is set
/// separately by [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(default = "default_velocity_profile")]
    pub velocity_profile: VelocityProfile,
    /// Wavenumbers `k > 0` carrying velocity; `k = 0` uses `mean_profile`.
    #[serde(default = "default_velocity_modes")]
    pub velocity_modes: Vec<ModeWeight>,
    #[serde(default)]
    pub mean_profile: Option<MeanProfile>,
    #[serde(default = "default_theta_profile")]
    pub theta_profile: ThetaProfile,
    /// Wavenumbers `k >= 0` carrying temperature.
    #[serde(default = "default_theta_modes")]
    pub theta_modes: Vec<ModeWeight>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            velocity_profile: default_velocity_profile(),
            velocity_modes: default_velocity_modes(),
            mean_profile: None,
            theta_profile: default_theta_profile(),
            theta_modes: default_theta_modes(),
        }
    }
}

fn seeded_cubic(seed: u64, salt: u64) -> [f64; 4] {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    [0; 4].map(|_| rng.random::<f64>() * 2.0 - 1.0)
}

fn cubic(c: &[f64; 4], y: f64) -> f64 {
    c[0] + y * (c[1] + y * (c[2] + y * c[3]))
}

/// `sum_k ||w_k|| + sum_{k != 0} |k|^{-1} ||d w_k||` and
/// `||T_0|| + sum_{k != 0} |k|^{1/6} ||T_k||` over all modes.
pub fn data_functionals(state: &ChannelState) -> (f64, f64) {
    let g = state.grid();
    let km = state.k_max() as i32;
    let mut de = 0.0;
    let mut dh = 0.0;
    for k in -km..=km {
        let w = state.omega(k);
        let th = state.theta(k);
        if k == 0 {
            de += g.l2(w);
            dh += g.l2(th);
        } else {
            let kf = (k as f64).abs();
            de += g.l2(w) + g.l2(&g.diff(w)) / kf;
            dh += kf.powf(1.0 / 6.0) * g.l2(th);
        }
    }
    (de, dh)
}

/// Initial state with the data functionals equal to `velocity_size` and
/// `theta_size`. Each vorticity mode `k != 0` is projected onto the
/// no-slip compatible subspace.
pub fn initial_state(
    grid: &Arc<ChebGrid>,
    k_max: usize,
    init: &InitConfig,
    seed: u64,
    velocity_size: f64,
    theta_size: f64,
) -> Result<ChannelState> {
    let n = grid.n();
    let km = k_max as i32;
    let mut omega = vec![CVector::zeros(n); k_max + 1];
    let mut theta = vec![CVector::zeros(n); k_max + 1];
    let mut mean_u = CVector::zeros(n);
    for mw in &init.velocity_modes {
        if mw.k <= 0 || mw.k > km {
            return Err(LabError::Config(format!(
                "velocity mode k = {} must lie in 1..={k_max} (the mean flow uses mean_profile)",
                mw.k
            )));
        }
        let c = seeded_cubic(seed, mw.k as u64);
        let psi = grid.sample_real(|y| {
            let env = (1.0 - y * y).powi(2);
            match init.velocity_profile {
                VelocityProfile::Quartic => env,
                VelocityProfile::QuarticOdd => y * env,
                VelocityProfile::Random => env * cubic(&c, y),
            }
        }) * mw.value();
        let kf = mw.k as f64;
        let w = grid.diff2(&psi) - psi * Complex64::new(kf * kf, 0.0);
        omega[mw.k as usize] += w;
    }
    if let Some(profile) = init.mean_profile {
        mean_u = grid.sample_real(|y| match profile {
            MeanProfile::Parabola => 1.0 - y * y,
            MeanProfile::Sine => (std::f64::consts::PI * y).sin(),
        });
    }
    for mw in &init.theta_modes {
        if mw.k < 0 || mw.k > km {
            return Err(LabError::Config(format!(
                "temperature mode k = {} must lie in 0..={k_max}",
                mw.k
            )));
        }
        let c = seeded_cubic(seed, 1000 + mw.k as u64);
        let t = grid.sample_real(|y| match init.theta_profile {
            ThetaProfile::Parabola => 1.0 - y * y,
            ThetaProfile::Sine => (std::f64::consts::PI * (y + 1.0) / 2.0).sin(),
            ThetaProfile::Odd => y * (1.0 - y * y),
            ThetaProfile::Random => (1.0 - y * y) * cubic(&c, y),
        });
        let v = if mw.k == 0 {
            t * Complex64::new(mw.re, 0.0)
        } else {
            t * mw.value()
        };
        theta[mw.k as usize] += v;
    }
    for t in theta.iter_mut() {
        t[0] = ZERO;
        t[n - 1] = ZERO;
    }
    let mut state = ChannelState::zeros(Arc::clone(grid), k_max);
    let mean_w = apply_real(grid.d1(), &mean_u);
    state.store(0, mean_w, theta[0].clone(), mean_u, CVector::zeros(n));
    for k in 1..=km {
        let w = ModeField::new(k, omega[k as usize].clone());
        let w = if w.max_abs() > 0.0 {
            compatibility_projection(grid, k, &w)?
        } else {
            w
        };
        state.set_mode(k, w.values, theta[k as usize].clone())?;
    }
    let (de, dh) = data_functionals(&state);
    let sv = if de > 0.0 { velocity_size / de } else { 0.0 };
    let st = if dh > 0.0 { theta_size / dh } else { 0.0 };
    let (sv, st) = (Complex64::new(sv, 0.0), Complex64::new(st, 0.0));
    for fs in [&mut state.omega, &mut state.u1, &mut state.u2] {
        for v in fs.iter_mut() {
            *v *= sv;
        }
    }
    for v in state.theta.iter_mut() {
        *v *= st;
    }
    Ok(state)
}

// ------------------------------------------------------------------- runs

fn default_sample_every() -> usize {
    10
}

fn default_true() -> bool {
    true
}

fn default_blowup() -> f64 {
    1e6
}

/// Output locations of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub ledger: Option<PathBuf>,
    #[serde(default)]
    pub audit: Option<PathBuf>,
    /// Directory receiving one snapshot per ledger sample.
    #[serde(default)]
    pub snapshots: Option<PathBuf>,
    /// JSON summary of the run status and the main-estimate sums.
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

/// A nonlinear run. The initial velocity is scaled so that its data
/// functional equals `velocity_amplitude` if given, otherwise
/// `eps0 min(nu, mu)^{1/2}`; likewise the temperature with
/// `theta_amplitude` or `eps1 min(nu, mu)^{11/12}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub k_max: usize,
    pub nu: f64,
    pub mu: f64,
    #[serde(default)]
    pub eps0: f64,
    #[serde(default)]
    pub eps1: f64,
    #[serde(default)]
    pub velocity_amplitude: Option<f64>,
    #[serde(default)]
    pub theta_amplitude: Option<f64>,
    #[serde(default)]
    pub init: InitConfig,
    /// Horizon `T`.
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub nonlinear: bool,
    /// Halt when the largest mode norm exceeds this multiple of its initial value.
    #[serde(default = "default_blowup")]
    pub blowup_factor: f64,
    /// Halt once `sum E_k > C D_E` or `sum H_k > C D_H` at a sample. The
    /// accumulators never decrease, so the final classification against the
    /// same envelope is unchanged.
    #[serde(default)]
    pub envelope_stop: Option<f64>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Viscosity and diffusivity; both zero selects pure transport.
    pub fn params(&self) -> Result<FluidParams> {
        if self.nu == 0.0 && self.mu == 0.0 {
            Ok(FluidParams::inviscid())
        } else {
            FluidParams::new(self.nu, self.mu)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if self.n < crate::grid::MIN_NODES {
            return Err(LabError::GridTooCoarse(self.n));
        }
        if self.k_max as i32 > DEFAULT_K_CAP {
            return Err(LabError::WavenumberCap {
                k: self.k_max as i32,
                cap: DEFAULT_K_CAP,
            });
        }
        if !(self.horizon > 0.0 && self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(LabError::Config(format!(
                "need 0 < dt <= T, got dt = {}, T = {}",
                self.dt, self.horizon
            )));
        }
        if self.sample_every == 0 {
            return Err(LabError::Config("sample_every must be at least 1".into()));
        }
        for (name, v) in [
            ("eps0", Some(self.eps0)),
            ("eps1", Some(self.eps1)),
            ("velocity_amplitude", self.velocity_amplitude),
            ("theta_amplitude", self.theta_amplitude),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(LabError::Config(format!("{name} = {v} must be >= 0")));
                }
            }
        }
        if !(self.blowup_factor > 1.0) {
            return Err(LabError::Config("blowup_factor must exceed 1".into()));
        }
        if let Some(c) = self.envelope_stop {
            if !(c > 0.0) {
                return Err(LabError::Config("envelope_stop must be positive".into()));
            }
        }
        Ok(())
    }

    /// Target sizes `(D_E, D_H)` of the initial data.
    pub fn data_sizes(&self) -> (f64, f64) {
        let m = self.nu.min(self.mu);
        (
            self.velocity_amplitude.unwrap_or(self.eps0 * m.sqrt()),
            self.theta_amplitude.unwrap_or(self.eps1 * m.powf(11.0 / 12.0)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Departed { time: f64, reason: String },
}

impl RunStatus {
    pub fn departed(&self) -> bool {
        matches!(self, RunStatus::Departed { .. })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: ChannelState,
    pub ledger: EnergyLedger,
    pub status: RunStatus,
    pub steps: usize,
    /// Step in use at the end (smaller than requested after CFL rejections).
    pub final_dt: f64,
    /// `(D_E, D_H)` of the initial data.
    pub data_sizes: (f64, f64),
}

/// Smallest fraction of the requested step accepted after CFL rejections.
const MIN_DT_FRACTION: f64 = 1e-4;

/// Integrate to the horizon, sampling the ledger every `sample_every`
/// steps and at the end. A CFL rejection restarts the step with the
/// suggested size (and a fresh flux history).
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let params = config.params()?;
    let grid = Arc::new(ChebGrid::new(config.n)?);
    let (de, dh) = config.data_sizes();
    let mut state = initial_state(&grid, config.k_max, &config.init, config.seed, de, dh)?;
    let mut ledger = EnergyLedger::new(&state, params.nu, params.mu);
    ledger.accumulate(&state, 0.0)?;
    let mut snapshot_index = 0usize;
    let mut write_snapshot_at = |s: &ChannelState| -> Result<()> {
        if let Some(dir) = &config.output.snapshots {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("snapshot_{snapshot_index:06}.bin"));
            write_snapshot(&path, s)?;
            snapshot_index += 1;
        }
        Ok(())
    };
    write_snapshot_at(&state)?;

    let initial_max = state.max_mode_norm();
    let (mut remaining, mut dt) = crate::semigroup::step_plan(config.horizon, config.dt)?;
    let mut sim = Simulator::new(Arc::clone(&grid), config.k_max, params, dt, config.nonlinear)?;
    let mut steps = 0usize;
    let mut last_sample = 0.0;
    let mut status = RunStatus::Completed;
    while remaining > 0 {
        let next = match sim.step(&state) {
            Ok(s) => s,
            Err(LabError::Cfl { suggested, .. }) => {
                if suggested < MIN_DT_FRACTION * config.dt {
                    status = RunStatus::Departed {
                        time: state.time,
                        reason: format!("CFL step collapsed to {suggested:.3e}"),
                    };
                    break;
                }
                let left = config.horizon - state.time;
                remaining = (left / suggested).ceil().max(1.0) as usize;
                dt = left / remaining as f64;
                sim = Simulator::new(Arc::clone(&grid), config.k_max, params, dt, config.nonlinear)?;
                continue;
            }
            Err(e) => return Err(e),
        };
        state = next;
        remaining -= 1;
        steps += 1;
        if !state.is_finite() {
            status = RunStatus::Departed {
                time: state.time,
                reason: "non-finite state".into(),
            };
            break;
        }
        let grown = initial_max > 0.0 && state.max_mode_norm() > config.blowup_factor * initial_max;
        if steps % config.sample_every == 0 || remaining == 0 || grown {
            ledger.accumulate(&state, state.time - last_sample)?;
            last_sample = state.time;
            write_snapshot_at(&state)?;
        }
        if let Some(c) = config.envelope_stop {
            if ledger.sum_e() > c * ledger.velocity_data_bound()
                || ledger.sum_h() > c * ledger.temperature_data_bound()
            {
                status = RunStatus::Departed {
                    time: state.time,
                    reason: format!("left the {c} x data envelope"),
                };
                break;
            }
        }
        if grown {
            status = RunStatus::Departed {
                time: state.time,
                reason: format!("mode norm exceeded {:.0e} x initial", config.blowup_factor),
            };
            break;
        }
    }
    Ok(RunOutput {
        state,
        ledger,
        status,
        steps,
        final_dt: dt,
        data_sizes: (de, dh),
    })
}

// -------------------------------------------------------------- snapshots

/// Snapshot layout, all little endian: `u64 n`, `u64 k_max`, `f64 time`,
/// then the vorticity modes `k = -k_max..=k_max`, then the temperature
/// modes in the same order, each as `n` pairs `(re: f64, im: f64)`.
pub fn write_snapshot(path: &Path, state: &ChannelState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_snapshot_to(&mut w, state)?;
    w.flush()?;
    Ok(())
}

pub fn write_snapshot_to<W: Write>(w: &mut W, state: &ChannelState) -> Result<()> {
    w.write_all(&(state.grid().n() as u64).to_le_bytes())?;
    w.write_all(&(state.k_max() as u64).to_le_bytes())?;
    w.write_all(&state.time.to_le_bytes())?;
    for fields in [&state.omega, &state.theta] {
        for v in fields {
            for z in v.iter() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_snapshot(path: &Path, grid: &Arc<ChebGrid>) -> Result<ChannelState> {
    read_snapshot_from(&mut BufReader::new(File::open(path)?), grid)
}

/// Read a snapshot and recover the velocity from the vorticity.
pub fn read_snapshot_from<R: Read>(r: &mut R, grid: &Arc<ChebGrid>) -> Result<ChannelState> {
    let mut b8 = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let n = next_u64(r)? as usize;
    let k_max = next_u64(r)? as usize;
    if n != grid.n() {
        return Err(LabError::Shape {
            expected: grid.n(),
            found: n,
        });
    }
    if k_max as i32 > DEFAULT_K_CAP {
        return Err(LabError::WavenumberCap {
            k: k_max as i32,
            cap: DEFAULT_K_CAP,
        });
    }
    let f8 = |r: &mut R| -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let time = f8(r)?;
    let read_modes = |r: &mut R| -> Result<Vec<CVector>> {
        (0..2 * k_max + 1)
            .map(|_| {
                let mut v = CVector::zeros(n);
                for i in 0..n {
                    let re = f8(r)?;
                    let im = f8(r)?;
                    v[i] = Complex64::new(re, im);
                }
                Ok(v)
            })
            .collect()
    };
    let omega = read_modes(r)?;
    let theta = read_modes(r)?;
    let mut state = ChannelState::zeros(Arc::clone(grid), k_max);
    state.time = time;
    for k in 0..=k_max as i32 {
        let i = (k + k_max as i32) as usize;
        state.set_mode(k, omega[i].clone(), theta[i].clone())?;
    }
    Ok(state)
}
