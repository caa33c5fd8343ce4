//! Linear evolution of single modes, decay-rate fits, space-time norms and
//! the forced space-time estimates for the temperature and the vorticity.
//!
//! All estimate checks report an implied constant: the ratio of the
//! measured left-hand side to the right-hand side evaluated with unit
//! constants. Nothing is asserted against a fixed value here.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{apply_real, weighted_norm_values, wall_weight, CVector, ChebGrid, ModeField};
use crate::harness::fit::line_fit;
use crate::operators::{
    compatibility_defect, velocity_from_streamfunction, velocity_from_vorticity, FluidParams,
    ModeOperator, OperatorKind,
};
use crate::stepper::{DirichletCn, VorticityCn};

/// Largest normalized inner product with the wall exponentials accepted as
/// compatible initial vorticity.
pub const COMPATIBILITY_TOL: f64 = 1e-8;

/// Number of steps and the step actually used to reach `horizon`.
pub fn step_plan(horizon: f64, dt: f64) -> Result<(usize, f64)> {
    if !(horizon > 0.0 && dt > 0.0 && dt.is_finite() && horizon.is_finite()) {
        return Err(LabError::Config(format!(
            "need positive horizon and step, got T = {horizon}, dt = {dt}"
        )));
    }
    if dt > horizon {
        return Err(LabError::Config(format!("dt = {dt} exceeds horizon {horizon}")));
    }
    let steps = (horizon / dt).round().max(1.0) as usize;
    Ok((steps, horizon / steps as f64))
}

// ---------------------------------------------------------------- forcing

/// Forcing families for the inhomogeneous problems. Each describes the pair
/// `(g1, g2)` entering the right-hand side `-i k g1 - d g2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ForcingSpec {
    Zero,
    /// Smooth random profiles in `y`, constant on time blocks of length
    /// `block`, switched off at `duration`.
    Noise {
        seed: u64,
        amp1: f64,
        amp2: f64,
        duration: f64,
        block: f64,
        #[serde(default = "default_noise_modes")]
        modes: usize,
    },
    /// A Gaussian bump of width `(kappa/|k|)^{1/3}` at `y0`, rotating with
    /// the local shear speed, under a `sin^2` envelope of length
    /// `duration_scale / (kappa k^2)^{1/3}`.
    Resonant {
        y0: f64,
        amp1: f64,
        amp2: f64,
        duration_scale: f64,
    },
}

fn default_noise_modes() -> usize {
    8
}

impl ForcingSpec {
    pub fn scaled(&self, s: f64) -> Self {
        match self.clone() {
            ForcingSpec::Zero => ForcingSpec::Zero,
            ForcingSpec::Noise {
                seed,
                amp1,
                amp2,
                duration,
                block,
                modes,
            } => ForcingSpec::Noise {
                seed,
                amp1: amp1 * s,
                amp2: amp2 * s,
                duration,
                block,
                modes,
            },
            ForcingSpec::Resonant {
                y0,
                amp1,
                amp2,
                duration_scale,
            } => ForcingSpec::Resonant {
                y0,
                amp1: amp1 * s,
                amp2: amp2 * s,
                duration_scale,
            },
        }
    }

    /// Time after which the forcing vanishes.
    pub fn duration(&self, k: i32, kappa: f64) -> f64 {
        match self {
            ForcingSpec::Zero => 0.0,
            ForcingSpec::Noise { duration, .. } => *duration,
            ForcingSpec::Resonant { duration_scale, .. } => {
                duration_scale / (kappa * (k as f64).powi(2)).powf(1.0 / 3.0)
            }
        }
    }

    /// Sample the profiles on `grid` for wavenumber `k` and diffusivity `kappa`.
    pub fn build(&self, grid: &ChebGrid, k: i32, kappa: f64) -> Result<Forcing> {
        let kind = match self {
            ForcingSpec::Zero => ForcingKind::Zero,
            ForcingSpec::Noise {
                seed,
                amp1,
                amp2,
                duration,
                block,
                modes,
            } => {
                if !(*block > 0.0 && *duration >= 0.0 && *modes >= 1) {
                    return Err(LabError::Config(
                        "noise forcing needs block > 0, duration >= 0, modes >= 1".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let blocks = (duration / block).ceil() as usize;
                let mut profile = |amp: f64| -> CVector {
                    let coeffs: Vec<Complex64> = (1..=*modes)
                        .map(|m| {
                            let re: f64 = StandardNormal.sample(&mut rng);
                            let im: f64 = StandardNormal.sample(&mut rng);
                            Complex64::new(re, im) / m as f64
                        })
                        .collect();
                    grid.sample(|y| {
                        coeffs
                            .iter()
                            .enumerate()
                            .map(|(m, c)| c * ((m + 1) as f64 * PI * (y + 1.0) / 2.0).sin())
                            .sum::<Complex64>()
                            * amp
                    })
                };
                let profiles = (0..blocks).map(|_| [profile(*amp1), profile(*amp2)]).collect();
                ForcingKind::Noise {
                    profiles,
                    block: *block,
                    duration: *duration,
                }
            }
            ForcingSpec::Resonant {
                y0,
                amp1,
                amp2,
                duration_scale,
            } => {
                if k == 0 || kappa <= 0.0 || *duration_scale <= 0.0 {
                    return Err(LabError::Config(
                        "resonant forcing needs k != 0, positive diffusivity and duration".into(),
                    ));
                }
                let width = (kappa / (k as f64).abs()).powf(1.0 / 3.0);
                let bump = grid.sample_real(|y| (-0.5 * ((y - y0) / width).powi(2)).exp());
                ForcingKind::Resonant {
                    profiles: [
                        &bump * Complex64::new(*amp1, 0.0),
                        &bump * Complex64::new(*amp2, 0.0),
                    ],
                    omega: k as f64 * y0,
                    duration: self.duration(k, kappa),
                }
            }
        };
        Ok(Forcing { kind })
    }
}

#[derive(Debug, Clone)]
enum ForcingKind {
    Zero,
    Noise {
        profiles: Vec<[CVector; 2]>,
        block: f64,
        duration: f64,
    },
    Resonant {
        profiles: [CVector; 2],
        omega: f64,
        duration: f64,
    },
}

/// A forcing pair sampled on a grid.
#[derive(Debug, Clone)]
pub struct Forcing {
    kind: ForcingKind,
}

impl Forcing {
    pub fn zero() -> Self {
        Self {
            kind: ForcingKind::Zero,
        }
    }

    /// `(g1, g2)` at time `t`, or `None` where the forcing vanishes.
    pub fn at(&self, t: f64) -> Option<(CVector, CVector)> {
        match &self.kind {
            ForcingKind::Zero => None,
            ForcingKind::Noise {
                profiles,
                block,
                duration,
            } => {
                if t < 0.0 || t >= *duration {
                    return None;
                }
                let b = ((t / block) as usize).min(profiles.len() - 1);
                Some((profiles[b][0].clone(), profiles[b][1].clone()))
            }
            ForcingKind::Resonant {
                profiles,
                omega,
                duration,
            } => {
                if t < 0.0 || t >= *duration {
                    return None;
                }
                let envelope = (PI * t / duration).sin().powi(2);
                let phase = Complex64::from_polar(envelope, -omega * t);
                Some((&profiles[0] * phase, &profiles[1] * phase))
            }
        }
    }
}

/// Right-hand side `-i k g1 - d g2`.
pub fn forcing_source(grid: &ChebGrid, k: i32, g1: &CVector, g2: &CVector) -> CVector {
    g1 * Complex64::new(0.0, -(k as f64)) - apply_real(grid.d1(), g2)
}

/// `(||g1||^2_{L2L2}, ||g2||^2_{L2L2})` by the midpoint rule on the same half
/// steps the propagators use.
pub fn forcing_norms_sq(grid: &ChebGrid, forcing: &Forcing, steps: usize, dt: f64) -> (f64, f64) {
    let mut acc = (0.0, 0.0);
    for s in 0..steps {
        if let Some((g1, g2)) = forcing.at((s as f64 + 0.5) * dt) {
            acc.0 += dt * grid.l2(&g1).powi(2);
            acc.1 += dt * grid.l2(&g2).powi(2);
        }
    }
    acc
}

// ------------------------------------------------------------- evolution

/// Values recorded along a linear evolution.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub k: i32,
    pub diffusivity: f64,
    pub kind: OperatorKind,
    pub times: Vec<f64>,
    pub fields: Vec<ModeField>,
    /// `(u1, u2)` per record; empty for temperature runs.
    pub velocities: Vec<[CVector; 2]>,
    grid: Arc<ChebGrid>,
}

impl Trajectory {
    pub fn new(
        grid: Arc<ChebGrid>,
        k: i32,
        diffusivity: f64,
        kind: OperatorKind,
    ) -> Self {
        Self {
            k,
            diffusivity,
            kind,
            times: Vec::new(),
            fields: Vec::new(),
            velocities: Vec::new(),
            grid,
        }
    }

    pub fn grid(&self) -> &Arc<ChebGrid> {
        &self.grid
    }

    pub fn push(&mut self, t: f64, field: CVector) {
        self.times.push(t);
        self.fields.push(ModeField::new(self.k, field));
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// L2 norm of each recorded field.
    pub fn norms(&self) -> Vec<f64> {
        self.fields.iter().map(|f| self.grid.l2(&f.values)).collect()
    }
}

/// One sample handed to an evolution observer.
pub struct Sample<'a> {
    pub step: usize,
    pub time: f64,
    pub field: &'a CVector,
    /// `(u1, u2)` for vorticity runs.
    pub velocity: Option<(&'a CVector, &'a CVector)>,
}

/// Evolve a mode with the trapezoidal rule and hand every state (the
/// initial one included) to `observe`.
pub fn evolve_observed(
    op: &ModeOperator,
    init: &ModeField,
    forcing: Option<&Forcing>,
    horizon: f64,
    dt: f64,
    observe: &mut dyn FnMut(Sample<'_>),
) -> Result<()> {
    let grid = op.grid();
    grid.check_len(init.len())?;
    let (steps, dt) = step_plan(horizon, dt)?;
    let n = grid.n();
    let k = op.k;
    let source_at = |t: f64| forcing.and_then(|f| f.at(t)).map(|(g1, g2)| forcing_source(grid, k, &g1, &g2));
    match op.kind {
        OperatorKind::Temperature => {
            let scale = init.max_abs().max(f64::MIN_POSITIVE);
            if init.values[0].norm() > 1e-12 * scale || init.values[n - 1].norm() > 1e-12 * scale {
                return Err(LabError::Config(
                    "temperature data must vanish at the walls".into(),
                ));
            }
            let cn = DirichletCn::new(grid, k, op.diffusivity, dt)?;
            let mut f = init.values.clone();
            f[0] = Complex64::new(0.0, 0.0);
            f[n - 1] = Complex64::new(0.0, 0.0);
            observe(Sample {
                step: 0,
                time: 0.0,
                field: &f,
                velocity: None,
            });
            for s in 0..steps {
                let src = source_at((s as f64 + 0.5) * dt);
                f = cn.step(&f, src.as_ref());
                check_finite(&f, s + 1)?;
                observe(Sample {
                    step: s + 1,
                    time: (s + 1) as f64 * dt,
                    field: &f,
                    velocity: None,
                });
            }
        }
        OperatorKind::Vorticity => {
            let cn = VorticityCn::new(grid, k, op.diffusivity, dt)?;
            let mut w = init.values.clone();
            let vel = velocity_from_vorticity(grid, k, init)?;
            observe(Sample {
                step: 0,
                time: 0.0,
                field: &w,
                velocity: Some((&vel.u1.values, &vel.u2.values)),
            });
            for s in 0..steps {
                let src = source_at((s as f64 + 0.5) * dt);
                let up = cn.step(grid, &w, src.as_ref());
                w = up.omega;
                check_finite(&w, s + 1)?;
                let vel = velocity_from_streamfunction(grid, k, &up.psi);
                observe(Sample {
                    step: s + 1,
                    time: (s + 1) as f64 * dt,
                    field: &w,
                    velocity: Some((&vel.u1.values, &vel.u2.values)),
                });
            }
        }
    }
    Ok(())
}

fn check_finite(v: &CVector, step: usize) -> Result<()> {
    if v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(LabError::Numerical(format!("non-finite state at step {step}")))
    }
}

/// Evolve and record every step.
pub fn evolve_linear(
    op: &ModeOperator,
    init: &ModeField,
    forcing: Option<&Forcing>,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    evolve_linear_with(op, init, forcing, horizon, dt, 1)
}

/// Evolve and record every `record_every`-th step plus the final one.
pub fn evolve_linear_with(
    op: &ModeOperator,
    init: &ModeField,
    forcing: Option<&Forcing>,
    horizon: f64,
    dt: f64,
    record_every: usize,
) -> Result<Trajectory> {
    let stride = record_every.max(1);
    let (steps, _) = step_plan(horizon, dt)?;
    let mut traj = Trajectory::new(Arc::clone(op.grid()), op.k, op.diffusivity, op.kind);
    evolve_observed(op, init, forcing, horizon, dt, &mut |s| {
        if s.step % stride == 0 || s.step == steps {
            traj.times.push(s.time);
            traj.fields.push(ModeField::new(op.k, s.field.clone()));
            if let Some((u1, u2)) = s.velocity {
                traj.velocities.push([u1.clone(), u2.clone()]);
            }
        }
    })?;
    Ok(traj)
}

// ------------------------------------------------------------ decay fits

/// Fitted exponential decay of a trajectory norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub k: i32,
    pub mu: f64,
    pub rate: f64,
    pub window_start: f64,
    pub window_end: f64,
    pub r2: f64,
}

/// Relative norm levels bounding the fit window.
pub const FIT_WINDOW: (f64, f64) = (1e-6, 1e-1);

/// Least-squares slope of `log ||f(t)||` where the norm lies between
/// `1e-6` and `1e-1` of its maximum, after the maximum.
pub fn fit_enhanced_dissipation(traj: &Trajectory) -> Result<DecayFit> {
    let norms = traj.norms();
    fit_decay_norms(traj.k, traj.diffusivity, &traj.times, &norms)
}

pub fn fit_decay_norms(k: i32, mu: f64, times: &[f64], norms: &[f64]) -> Result<DecayFit> {
    let (peak_idx, peak) = norms
        .iter()
        .cloned()
        .enumerate()
        .fold((0, 0.0), |a, (i, v)| if v > a.1 { (i, v) } else { a });
    if peak == 0.0 {
        return Err(LabError::NoDecayWindow { reached: 1.0 });
    }
    let reached = norms[peak_idx..].iter().cloned().fold(f64::INFINITY, f64::min) / peak;
    if reached > FIT_WINDOW.0 {
        return Err(LabError::NoDecayWindow { reached });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = times[peak_idx..]
        .iter()
        .zip(&norms[peak_idx..])
        .filter(|(_, &v)| {
            let r = v / peak;
            (FIT_WINDOW.0..=FIT_WINDOW.1).contains(&r)
        })
        .map(|(&t, &v)| (t, v.ln()))
        .unzip();
    if xs.len() < 3 {
        return Err(LabError::NoDecayWindow { reached });
    }
    let fit = line_fit(&xs, &ys)?;
    Ok(DecayFit {
        k,
        mu,
        rate: -fit.slope,
        window_start: xs[0],
        window_end: xs[xs.len() - 1],
        r2: fit.r2,
    })
}

/// `10 / (mu^{1/3} |k|^{2/3})`, or `8 / mu` for the mean mode.
pub fn default_decay_horizon(k: i32, mu: f64) -> f64 {
    if k == 0 {
        8.0 / mu
    } else {
        10.0 / (mu.powf(1.0 / 3.0) * (k as f64).abs().powf(2.0 / 3.0))
    }
}

/// Smooth profile vanishing at the walls: `(1 - y^2) sum_m c_m T_m(y)` with
/// seeded complex coefficients, unit L2 norm.
pub fn smooth_random_profile(grid: &ChebGrid, seed: u64, degree: usize) -> CVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<Complex64> = (0..=degree)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        })
        .collect();
    let f = grid.sample(|y| {
        let theta = y.clamp(-1.0, 1.0).acos();
        coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| c * (m as f64 * theta).cos())
            .sum::<Complex64>()
            * (1.0 - y * y)
    });
    let norm = grid.l2(&f);
    f / Complex64::new(norm, 0.0)
}

/// Evolve temperature data with a step of `dt` and fit the decay rate,
/// doubling the horizon (at most `max_doublings` times) until the norm
/// reaches the bottom of the fit window.
pub fn measure_decay_rate(
    grid: &Arc<ChebGrid>,
    k: i32,
    mu: f64,
    init: &ModeField,
    dt: f64,
    horizon: f64,
    max_doublings: usize,
) -> Result<DecayFit> {
    let params = FluidParams::new(mu, mu)?;
    let op = crate::operators::assemble_mode_operator(grid, k, &params, OperatorKind::Temperature);
    let mut horizon = horizon;
    let mut attempt = 0;
    loop {
        let (steps, _) = step_plan(horizon, dt.min(horizon))?;
        let stride = (steps / 4000).max(1);
        let mut times = Vec::new();
        let mut norms = Vec::new();
        let mut floor_hit = false;
        let mut peak: f64 = 0.0;
        evolve_observed(&op, init, None, horizon, dt.min(horizon), &mut |s| {
            if floor_hit {
                return;
            }
            let v = grid.l2(s.field);
            peak = peak.max(v);
            if s.step % stride == 0 || s.step == steps || v < 1e-3 * FIT_WINDOW.0 * peak {
                times.push(s.time);
                norms.push(v);
            }
            if v < 1e-3 * FIT_WINDOW.0 * peak {
                floor_hit = true;
            }
        })?;
        match fit_decay_norms(k, mu, &times, &norms) {
            Err(LabError::NoDecayWindow { .. }) if attempt < max_doublings => {
                horizon *= 2.0;
                attempt += 1;
            }
            other => return other,
        }
    }
}

// ------------------------------------------------------- space-time norms

/// Exponent of a Lebesgue norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exponent {
    Two,
    Infinity,
}

/// `|| ||f(t)||_{L^q} ||_{L^p(0,T)}` on the recorded samples: trapezoid in
/// time for `p = 2`, maximum over samples for `p = inf`. An optional weight
/// multiplies `|f|^2` in the `y` integral (and `|f|` by its square root for
/// `q = inf`).
pub fn spacetime_norm(
    traj: &Trajectory,
    p: Exponent,
    q: Exponent,
    weight: Option<&dyn Fn(f64) -> f64>,
) -> f64 {
    let grid = traj.grid();
    let values: Vec<f64> = traj
        .fields
        .iter()
        .map(|f| match q {
            Exponent::Two => weighted_norm_values(grid, &f.values, weight),
            Exponent::Infinity => max_norm(grid, &f.values, weight),
        })
        .collect();
    time_norm(&traj.times, &values, p)
}

/// Space-time norm of the velocity vector `(u1, u2)` of a vorticity run.
pub fn velocity_spacetime_norm(traj: &Trajectory, p: Exponent, q: Exponent) -> f64 {
    let grid = traj.grid();
    let values: Vec<f64> = traj
        .velocities
        .iter()
        .map(|[u1, u2]| match q {
            Exponent::Two => (grid.l2(u1).powi(2) + grid.l2(u2).powi(2)).sqrt(),
            Exponent::Infinity => vector_max(u1, u2),
        })
        .collect();
    time_norm(&traj.times, &values, p)
}

fn max_norm(grid: &ChebGrid, v: &CVector, weight: Option<&dyn Fn(f64) -> f64>) -> f64 {
    v.iter()
        .zip(grid.nodes())
        .map(|(z, &y)| z.norm() * weight.map_or(1.0, |w| w(y).sqrt()))
        .fold(0.0, f64::max)
}

/// `max_j sqrt(|u1_j|^2 + |u2_j|^2)`.
pub fn vector_max(u1: &CVector, u2: &CVector) -> f64 {
    u1.iter()
        .zip(u2.iter())
        .map(|(a, b)| (a.norm_sqr() + b.norm_sqr()).sqrt())
        .fold(0.0, f64::max)
}

fn time_norm(times: &[f64], values: &[f64], p: Exponent) -> f64 {
    match p {
        Exponent::Infinity => values.iter().cloned().fold(0.0, f64::max),
        Exponent::Two => {
            let mut acc = TimeIntegral::default();
            for (&t, &v) in times.iter().zip(values) {
                acc.push(t, v * v);
            }
            acc.value().sqrt()
        }
    }
}

/// Running trapezoid integral of a sampled function of time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeIntegral {
    total: f64,
    last: Option<(f64, f64)>,
}

impl TimeIntegral {
    pub fn push(&mut self, t: f64, v: f64) {
        if let Some((t0, v0)) = self.last {
            self.total += 0.5 * (t - t0) * (v + v0);
        }
        self.last = Some((t, v));
    }

    /// Add the trapezoid over a step of length `dt` ending at value `v`.
    pub fn push_step(&mut self, dt: f64, v: f64) {
        match self.last {
            Some((t0, _)) => self.push(t0 + dt, v),
            None => self.last = Some((0.0, v)),
        }
    }

    pub fn value(&self) -> f64 {
        self.total
    }
}

/// Running supremum and time integral of a nonnegative quantity and its
/// square: `sup f` and `int f^2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeAccumulator {
    pub sup: f64,
    integral: TimeIntegral,
}

impl SpaceTimeAccumulator {
    pub fn push(&mut self, t: f64, norm: f64) {
        self.sup = self.sup.max(norm);
        self.integral.push(t, norm * norm);
    }

    /// `(int_0^T f^2 dt)^{1/2}`.
    pub fn l2(&self) -> f64 {
        self.integral.value().sqrt()
    }

    pub fn int_sq(&self) -> f64 {
        self.integral.value()
    }
}

// ------------------------------------------------------------- estimates

/// Measured sides of one space-time estimate. `lhs` and `rhs` hold the
/// individual terms with their parameter prefactors and unit constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: String,
    pub k: i32,
    pub param: f64,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub implied_c: f64,
}

impl EstimateReport {
    fn new(estimate: &str, k: i32, param: f64, lhs: Vec<f64>, rhs: Vec<f64>) -> Self {
        let l: f64 = lhs.iter().sum();
        let r: f64 = rhs.iter().sum();
        let implied_c = if l == 0.0 {
            0.0
        } else if r == 0.0 {
            f64::INFINITY
        } else {
            l / r
        };
        Self {
            estimate: estimate.to_string(),
            k,
            param,
            lhs,
            rhs,
            implied_c,
        }
    }

    pub fn lhs_total(&self) -> f64 {
        self.lhs.iter().sum()
    }

    pub fn rhs_total(&self) -> f64 {
        self.rhs.iter().sum()
    }

    /// Flat row for CSV output.
    pub fn row(&self) -> EstimateRow {
        let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        EstimateRow {
            estimate: self.estimate.clone(),
            k: self.k,
            param: self.param,
            lhs_1: at(&self.lhs, 0),
            lhs_2: at(&self.lhs, 1),
            lhs_3: at(&self.lhs, 2),
            lhs_4: at(&self.lhs, 3),
            rhs_1: at(&self.rhs, 0),
            rhs_2: at(&self.rhs, 1),
            rhs_3: at(&self.rhs, 2),
            lhs_total: self.lhs_total(),
            rhs_total: self.rhs_total(),
            implied_c: self.implied_c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimate: String,
    pub k: i32,
    pub param: f64,
    pub lhs_1: f64,
    pub lhs_2: f64,
    pub lhs_3: f64,
    pub lhs_4: f64,
    pub rhs_1: f64,
    pub rhs_2: f64,
    pub rhs_3: f64,
    pub lhs_total: f64,
    pub rhs_total: f64,
    pub implied_c: f64,
}

fn temperature_run(
    grid: &Arc<ChebGrid>,
    k: i32,
    mu: f64,
    init: &ModeField,
    forcing: &ForcingSpec,
    horizon: f64,
    dt: f64,
) -> Result<(SpaceTimeAccumulator, (f64, f64))> {
    let params = FluidParams::new(mu, mu)?;
    let op = crate::operators::assemble_mode_operator(grid, k, &params, OperatorKind::Temperature);
    let forcing = forcing.build(grid, k, mu)?;
    let (steps, dt_eff) = step_plan(horizon, dt)?;
    let mut acc = SpaceTimeAccumulator::default();
    evolve_observed(&op, init, Some(&forcing), horizon, dt, &mut |s| {
        acc.push(s.time, grid.l2(s.field));
    })?;
    Ok((acc, forcing_norms_sq(grid, &forcing, steps, dt_eff)))
}

/// Zero data, forced temperature: `(mu k^2)^{1/3} ||T||^2_{L2L2} +
/// ||T||^2_{LinfL2}` against `mu^{-1/3} |k|^{4/3} ||g1||^2 + mu^{-1} ||g2||^2`.
pub fn verify_inhomogeneous_temperature(
    grid: &Arc<ChebGrid>,
    k: i32,
    mu: f64,
    forcing: &ForcingSpec,
    horizon: f64,
    dt: f64,
) -> Result<EstimateReport> {
    if k == 0 {
        return Err(LabError::Config("estimate is stated for k != 0".into()));
    }
    let zero = ModeField::zeros(k, grid.n());
    let (acc, (g1, g2)) = temperature_run(grid, k, mu, &zero, forcing, horizon, dt)?;
    let kf = (k as f64).abs();
    let lhs = vec![(mu * kf * kf).powf(1.0 / 3.0) * acc.int_sq(), acc.sup.powi(2)];
    let rhs = vec![mu.powf(-1.0 / 3.0) * kf.powf(4.0 / 3.0) * g1, g2 / mu];
    Ok(EstimateReport::new("inhomogeneous_temperature", k, mu, lhs, rhs))
}

/// Data plus forcing: the same left-hand side against
/// `||T_in||^2 + mu^{-1/3} |k|^{4/3} ||g1||^2 + mu^{-1} ||g2||^2`, with one
/// constant multiplying all three terms.
pub fn verify_temperature_estimate(
    grid: &Arc<ChebGrid>,
    k: i32,
    mu: f64,
    init: &ModeField,
    forcing: &ForcingSpec,
    horizon: f64,
    dt: f64,
) -> Result<EstimateReport> {
    if k == 0 {
        return Err(LabError::Config("estimate is stated for k != 0".into()));
    }
    let (acc, (g1, g2)) = temperature_run(grid, k, mu, init, forcing, horizon, dt)?;
    let kf = (k as f64).abs();
    let lhs = vec![acc.sup.powi(2), (mu * kf * kf).powf(1.0 / 3.0) * acc.int_sq()];
    let rhs = vec![
        grid.l2(&init.values).powi(2),
        mu.powf(-1.0 / 3.0) * kf.powf(4.0 / 3.0) * g1,
        g2 / mu,
    ];
    Ok(EstimateReport::new("temperature", k, mu, lhs, rhs))
}

/// Vorticity estimate with no-slip closure:
/// `|k| ||u||^2_{LinfLinf} + k^2 ||u||^2_{L2L2} + (nu k^2)^{1/2} ||w||^2_{L2L2}
/// + ||(1-|y|)^{1/2} w||^2_{LinfL2}` against
/// `||w_in||^2 + k^{-2} ||d w_in||^2 + nu^{-1/2} |k| ||f1||^2 + nu^{-1} ||f2||^2`.
pub fn verify_vorticity_estimate(
    grid: &Arc<ChebGrid>,
    k: i32,
    nu: f64,
    init: &ModeField,
    forcing: &ForcingSpec,
    horizon: f64,
    dt: f64,
) -> Result<EstimateReport> {
    if k == 0 {
        return Err(LabError::Config("estimate is stated for k != 0".into()));
    }
    grid.check_len(init.len())?;
    let (plus, minus) = compatibility_defect(grid, k, init);
    if grid.l2(&init.values) > 0.0 && (plus > COMPATIBILITY_TOL || minus > COMPATIBILITY_TOL) {
        return Err(LabError::Incompatible { plus, minus });
    }
    let params = FluidParams::new(nu, nu)?;
    let op = crate::operators::assemble_mode_operator(grid, k, &params, OperatorKind::Vorticity);
    let built = forcing.build(grid, k, nu)?;
    let (steps, dt_eff) = step_plan(horizon, dt)?;
    let mut u_acc = SpaceTimeAccumulator::default();
    let mut u_inf = 0.0f64;
    let mut w_acc = SpaceTimeAccumulator::default();
    let mut w_wall = 0.0f64;
    let wall: &dyn Fn(f64) -> f64 = &wall_weight;
    evolve_observed(&op, init, Some(&built), horizon, dt, &mut |s| {
        let (u1, u2) = s.velocity.expect("vorticity runs carry velocity");
        u_acc.push(s.time, (grid.l2(u1).powi(2) + grid.l2(u2).powi(2)).sqrt());
        u_inf = u_inf.max(vector_max(u1, u2));
        w_acc.push(s.time, grid.l2(s.field));
        w_wall = w_wall.max(weighted_norm_values(grid, s.field, Some(wall)));
    })?;
    let (f1, f2) = forcing_norms_sq(grid, &built, steps, dt_eff);
    let kf = (k as f64).abs();
    let lhs = vec![
        kf * u_inf.powi(2),
        kf * kf * u_acc.int_sq(),
        (nu * kf * kf).sqrt() * w_acc.int_sq(),
        w_wall.powi(2),
    ];
    let data = grid.l2(&init.values).powi(2) + grid.l2(&grid.diff(&init.values)).powi(2) / (kf * kf);
    let rhs = vec![data, kf / nu.sqrt() * f1, f2 / nu];
    Ok(EstimateReport::new("vorticity", k, nu, lhs, rhs))
}

/// Discrete check of the temperature energy identity
/// `||T(t)||^2 + 2 mu int (||dT||^2 + k^2 ||T||^2) = ||T_in||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub initial_sq: f64,
    pub final_sq: f64,
    pub dissipation: f64,
    pub relative_defect: f64,
}

/// Energy balance along an unforced temperature trajectory recorded at
/// every step. The dissipation integral uses the step midpoints.
pub fn energy_balance(traj: &Trajectory) -> Result<EnergyBalance> {
    if traj.kind != OperatorKind::Temperature || traj.len() < 2 {
        return Err(LabError::Config(
            "energy balance needs a temperature trajectory with at least two records".into(),
        ));
    }
    let grid = traj.grid();
    let mu = traj.diffusivity;
    let k2 = (traj.k as f64).powi(2);
    let mut dissipation = 0.0;
    for i in 0..traj.len() - 1 {
        let mid = (&traj.fields[i].values + &traj.fields[i + 1].values) * Complex64::new(0.5, 0.0);
        let rate = grid.l2(&grid.diff(&mid)).powi(2) + k2 * grid.l2(&mid).powi(2);
        dissipation += 2.0 * mu * rate * (traj.times[i + 1] - traj.times[i]);
    }
    let initial_sq = grid.l2(&traj.fields[0].values).powi(2);
    let final_sq = grid.l2(&traj.fields[traj.len() - 1].values).powi(2);
    let relative_defect = if initial_sq > 0.0 {
        (final_sq + dissipation - initial_sq).abs() / initial_sq
    } else {
        0.0
    };
    Ok(EnergyBalance {
        initial_sq,
        final_sq,
        dissipation,
        relative_defect,
    })
}
