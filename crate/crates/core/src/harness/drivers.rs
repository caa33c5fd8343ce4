//! Configuration schemas and drivers for the subcommands.
//!
//! Every driver reads a TOML file, writes versioned CSV or JSON, and returns
//! a short text summary. Output is a pure function of the configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::fit::{fit_exponent, LineFit};
use super::scan::{threshold_scan, ScanConfig, ThresholdScanResult};
use crate::error::{LabError, Result};
use crate::grid::{ChebGrid, ModeField};
use crate::io::{read_records_from_path, write_records_to_path};
use crate::ledger::{audit_bootstrap, main_estimate_check, write_audit_csv, EnergyLedger, DEFAULT_ENVELOPE_C};
use crate::nonlinear::{run, RunConfig, RunOutput};
use crate::resolvent::{lambda_grid, sweep_resolvent, ResolventSweep};
use crate::semigroup::{
    default_decay_horizon, measure_decay_rate, smooth_random_profile, verify_inhomogeneous_temperature,
    verify_temperature_estimate, verify_vorticity_estimate, DecayFit, EstimateReport, ForcingSpec,
};

/// Parse a TOML configuration file. Unreadable or malformed files are
/// configuration errors.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Versioned<'a, T> {
        format: String,
        #[serde(flatten)]
        body: &'a T,
    }
    let doc = Versioned {
        format: format!("couette-lab {kind} v{}", crate::io::FORMAT_VERSION),
        body: value,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let text = serde_json::to_string_pretty(&doc).map_err(|e| LabError::Numerical(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn require_output(output: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    output
        .clone()
        .ok_or_else(|| LabError::Config(format!("{what}: no output path configured")))
}

// -------------------------------------------------------- resolvent sweep

fn default_sweep_n() -> usize {
    128
}

fn default_lambda_lo() -> f64 {
    -1.5
}

fn default_lambda_hi() -> f64 {
    1.5
}

fn default_lambda_count() -> usize {
    21
}

fn default_trials() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventSweepConfig {
    #[serde(default = "default_sweep_n")]
    pub n: usize,
    pub k: Vec<i32>,
    pub mu: Vec<f64>,
    #[serde(default = "default_lambda_lo")]
    pub lambda_min: f64,
    #[serde(default = "default_lambda_hi")]
    pub lambda_max: f64,
    #[serde(default = "default_lambda_count")]
    pub lambda_count: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

pub fn resolvent_sweep(cfg: &ResolventSweepConfig) -> Result<ResolventSweep> {
    if cfg.lambda_count == 0 || cfg.trials == 0 || !(cfg.lambda_max >= cfg.lambda_min) {
        return Err(LabError::Config(
            "need lambda_count >= 1, trials >= 1 and lambda_min <= lambda_max".into(),
        ));
    }
    let grid = Arc::new(ChebGrid::new(cfg.n)?);
    let lambdas = lambda_grid(cfg.lambda_min, cfg.lambda_max, cfg.lambda_count);
    sweep_resolvent(&grid, &cfg.k, &cfg.mu, &lambdas, cfg.trials, cfg.seed)
}

pub fn run_resolvent_sweep(cfg: &ResolventSweepConfig, output: Option<&Path>) -> Result<String> {
    let out = output.map(Path::to_path_buf).map_or_else(|| require_output(&cfg.output, "resolvent-sweep"), Ok)?;
    let sweep = resolvent_sweep(cfg)?;
    write_records_to_path(&out, "resolvent-sweep", &sweep.samples)?;
    let mut text = format!("{} samples written to {}\n", sweep.samples.len(), out.display());
    for &k in &cfg.k {
        for &mu in &cfg.mu {
            if let Some(m) = sweep.max_ratio_at(k, mu) {
                text += &format!("k = {k:3}  mu = {mu:.1e}  max ratio_l2 = {m:.4}\n");
            }
        }
    }
    if let Some(f) = sweep.failures.first() {
        return Err(LabError::Numerical(format!(
            "{} resolvent solves failed; first: {f:?}",
            sweep.failures.len()
        )));
    }
    Ok(text)
}

// ------------------------------------------------------------- decay fit

fn default_decay_n() -> usize {
    192
}

fn default_dt_scale() -> f64 {
    0.05
}

fn default_degree() -> usize {
    6
}

fn default_doublings() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayFitConfig {
    #[serde(default = "default_decay_n")]
    pub n: usize,
    pub k: Vec<i32>,
    pub mu: Vec<f64>,
    /// Time step `dt_scale / max(|k|, 1)`.
    #[serde(default = "default_dt_scale")]
    pub dt_scale: f64,
    /// Seed and polynomial degree of the initial profile.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_doublings")]
    pub max_doublings: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// JSON with the exponent fits across `mu` and across `k`.
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// `"mu"` (fixed `k`) or `"k"` (fixed `mu`).
    pub variable: String,
    pub fixed: f64,
    pub fit: LineFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub fits: Vec<DecayFit>,
    pub scaling: Vec<ScalingFit>,
}

/// Fit every `(k, mu)` in parallel, then regress the rates on `mu` at each
/// `k` and on `|k|` (nonzero) at each `mu` where three or more points exist.
pub fn decay_fits(cfg: &DecayFitConfig) -> Result<DecaySummary> {
    if !(cfg.dt_scale > 0.0) {
        return Err(LabError::Config("dt_scale must be positive".into()));
    }
    let grid = Arc::new(ChebGrid::new(cfg.n)?);
    let init = smooth_random_profile(&grid, cfg.seed, cfg.degree);
    let points: Vec<(i32, f64)> = cfg
        .k
        .iter()
        .flat_map(|&k| cfg.mu.iter().map(move |&mu| (k, mu)))
        .collect();
    let fits = points
        .par_iter()
        .map(|&(k, mu)| {
            let dt = cfg.dt_scale / (k.unsigned_abs().max(1) as f64);
            let f = ModeField::new(k, init.clone());
            measure_decay_rate(&grid, k, mu, &f, dt, default_decay_horizon(k, mu), cfg.max_doublings)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scaling = Vec::new();
    for &k in &cfg.k {
        let pts: Vec<(f64, f64)> = fits.iter().filter(|f| f.k == k).map(|f| (f.mu, f.rate)).collect();
        if pts.len() >= 3 {
            scaling.push(ScalingFit {
                variable: "mu".into(),
                fixed: k as f64,
                fit: fit_exponent(&pts)?,
            });
        }
    }
    for &mu in &cfg.mu {
        let pts: Vec<(f64, f64)> = fits
            .iter()
            .filter(|f| f.mu == mu && f.k != 0)
            .map(|f| (f.k.unsigned_abs() as f64, f.rate))
            .collect();
        if pts.len() >= 3 {
            scaling.push(ScalingFit {
                variable: "k".into(),
                fixed: mu,
                fit: fit_exponent(&pts)?,
            });
        }
    }
    Ok(DecaySummary { fits, scaling })
}

pub fn run_decay_fit(cfg: &DecayFitConfig, output: Option<&Path>) -> Result<String> {
    let out = output.map(Path::to_path_buf).map_or_else(|| require_output(&cfg.output, "decay-fit"), Ok)?;
    let summary = decay_fits(cfg)?;
    write_records_to_path(&out, "decay-fit", &summary.fits)?;
    if let Some(path) = &cfg.summary {
        write_json(path, "decay-fit-summary", &summary)?;
    }
    let mut text = String::new();
    for f in &summary.fits {
        text += &format!("k = {:3}  mu = {:.1e}  rate = {:.5e}  r2 = {:.4}\n", f.k, f.mu, f.rate, f.r2);
    }
    for s in &summary.scaling {
        text += &format!(
            "slope in {} at {} = {:.1e}: {:.4} +- {:.4}\n",
            s.variable,
            if s.variable == "mu" { "k" } else { "mu" },
            s.fixed,
            s.fit.slope,
            s.fit.slope_half_width
        );
    }
    Ok(text)
}

// ------------------------------------------------------ verify estimates

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    /// Zero-data forced temperature.
    InhomogeneousTemperature,
    /// Temperature with data and forcing.
    Temperature,
    /// Vorticity with data and forcing under the no-slip closure.
    Vorticity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitShape {
    #[default]
    None,
    /// Unit-norm `1 - y^2` for temperature; for vorticity the compatible
    /// field `(d^2 - k^2) (1 - y^2)^2`.
    Smooth,
}

fn default_scales() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyCase {
    pub estimate: EstimateKind,
    pub k: Vec<i32>,
    /// Diffusivity `mu` (temperature) or viscosity `nu` (vorticity).
    pub param: Vec<f64>,
    #[serde(default = "zero_forcing")]
    pub forcing: ForcingSpec,
    #[serde(default)]
    pub init: InitShape,
    /// Fixed horizon; by default the forcing duration plus the decay
    /// horizon `10 / (param^{1/3} |k|^{2/3})`.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Forcing (and data) multipliers evaluated for every point.
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
}

fn zero_forcing() -> ForcingSpec {
    ForcingSpec::Zero
}

fn default_verify_n() -> usize {
    96
}

fn default_verify_dt() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_verify_n")]
    pub n: usize,
    /// Time step `dt / |k|`.
    #[serde(default = "default_verify_dt")]
    pub dt: f64,
    #[serde(rename = "case")]
    pub cases: Vec<VerifyCase>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// One verification row: the estimate report plus the applied scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub estimate: String,
    pub k: i32,
    pub param: f64,
    pub scale: f64,
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

impl VerifyRow {
    fn new(scale: f64, r: &EstimateReport) -> Self {
        let row = r.row();
        Self {
            estimate: row.estimate,
            k: row.k,
            param: row.param,
            scale,
            lhs_1: row.lhs_1,
            lhs_2: row.lhs_2,
            lhs_3: row.lhs_3,
            lhs_4: row.lhs_4,
            rhs_1: row.rhs_1,
            rhs_2: row.rhs_2,
            rhs_3: row.rhs_3,
            lhs_total: row.lhs_total,
            rhs_total: row.rhs_total,
            implied_c: row.implied_c,
        }
    }
}

/// Initial field for `shape` at wavenumber `k`, unit `L2` norm.
pub fn init_field(grid: &ChebGrid, kind: EstimateKind, shape: InitShape, k: i32) -> ModeField {
    let n = grid.n();
    let values = match (shape, kind) {
        (InitShape::None, _) | (_, EstimateKind::InhomogeneousTemperature) => return ModeField::zeros(k, n),
        (InitShape::Smooth, EstimateKind::Temperature) => grid.sample_real(|y| 1.0 - y * y),
        (InitShape::Smooth, EstimateKind::Vorticity) => {
            let kf = k as f64;
            grid.sample_real(|y| {
                let s = 1.0 - y * y;
                // (d^2 - k^2) (1 - y^2)^2
                12.0 * y * y - 4.0 - kf * kf * s * s
            })
        }
    };
    let norm = grid.l2(&values);
    ModeField::new(k, values.map(|z| z / norm))
}

/// Evaluate one case at every `(k, param, scale)`; the data and forcing are
/// multiplied together by `scale`.
pub fn verify_case(grid: &Arc<ChebGrid>, dt: f64, case: &VerifyCase) -> Result<Vec<VerifyRow>> {
    let mut points = Vec::new();
    for &k in &case.k {
        for &p in &case.param {
            for &s in &case.scales {
                points.push((k, p, s));
            }
        }
    }
    points
        .par_iter()
        .map(|&(k, p, s)| {
            if k == 0 {
                return Err(LabError::Config("estimates are verified for k != 0".into()));
            }
            let forcing = case.forcing.scaled(s);
            let init = init_field(grid, case.estimate, case.init, k).scaled(s);
            let horizon = case
                .horizon
                .unwrap_or_else(|| case.forcing.duration(k, p) + default_decay_horizon(k, p));
            let dtk = dt / k.unsigned_abs() as f64;
            let report = match case.estimate {
                EstimateKind::InhomogeneousTemperature => {
                    verify_inhomogeneous_temperature(grid, k, p, &forcing, horizon, dtk)?
                }
                EstimateKind::Temperature => verify_temperature_estimate(grid, k, p, &init, &forcing, horizon, dtk)?,
                EstimateKind::Vorticity => verify_vorticity_estimate(grid, k, p, &init, &forcing, horizon, dtk)?,
            };
            Ok(VerifyRow::new(s, &report))
        })
        .collect()
}

pub fn verify_estimates(cfg: &VerifyConfig) -> Result<Vec<VerifyRow>> {
    if !(cfg.dt > 0.0) {
        return Err(LabError::Config("dt must be positive".into()));
    }
    let grid = Arc::new(ChebGrid::new(cfg.n)?);
    let mut rows = Vec::new();
    for case in &cfg.cases {
        rows.extend(verify_case(&grid, cfg.dt, case)?);
    }
    Ok(rows)
}

/// Largest over smallest finite implied constant among rows at scale 1.
pub fn implied_c_spread(rows: &[VerifyRow], estimate: &str) -> Option<f64> {
    let cs: Vec<f64> = rows
        .iter()
        .filter(|r| r.estimate == estimate && r.scale == 1.0 && r.implied_c.is_finite() && r.implied_c > 0.0)
        .map(|r| r.implied_c)
        .collect();
    if cs.is_empty() {
        return None;
    }
    let hi = cs.iter().copied().fold(f64::MIN, f64::max);
    let lo = cs.iter().copied().fold(f64::MAX, f64::min);
    Some(hi / lo)
}

pub fn run_verify_estimates(cfg: &VerifyConfig, output: Option<&Path>) -> Result<String> {
    let out = output.map(Path::to_path_buf).map_or_else(|| require_output(&cfg.output, "verify-estimates"), Ok)?;
    let rows = verify_estimates(cfg)?;
    write_records_to_path(&out, "verify-estimates", &rows)?;
    let mut text = String::new();
    for r in &rows {
        text += &format!(
            "{:26} k = {:3}  param = {:.1e}  scale = {:.1e}  implied C = {:.4e}\n",
            r.estimate, r.k, r.param, r.scale, r.implied_c
        );
    }
    let mut names: Vec<&str> = rows.iter().map(|r| r.estimate.as_str()).collect();
    names.dedup();
    for name in names {
        if let Some(s) = implied_c_spread(&rows, name) {
            text += &format!("{name}: max/min implied C = {s:.3}\n");
        }
    }
    Ok(text)
}

// --------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: crate::nonlinear::RunStatus,
    pub steps: usize,
    pub final_dt: f64,
    pub horizon: f64,
    pub sum_e: f64,
    pub sum_h: f64,
    pub data_e: f64,
    pub data_h: f64,
    pub tail_e: f64,
    pub tail_h: f64,
}

impl RunSummary {
    pub fn new(out: &RunOutput) -> Self {
        let l = &out.ledger;
        let (tail_e, tail_h) = l.tail_indicator();
        Self {
            status: out.status.clone(),
            steps: out.steps,
            final_dt: out.final_dt,
            horizon: l.horizon(),
            sum_e: l.sum_e(),
            sum_h: l.sum_h(),
            data_e: l.velocity_data_bound(),
            data_h: l.temperature_data_bound(),
            tail_e,
            tail_h,
        }
    }
}

/// Run, then write the ledger, audit and summary named in the configuration.
/// `output` overrides the ledger path.
pub fn run_simulate(cfg: &RunConfig, output: Option<&Path>) -> Result<(RunOutput, String)> {
    let out = run(cfg)?;
    let ledger_path = output.map(Path::to_path_buf).or_else(|| cfg.output.ledger.clone());
    if let Some(p) = &ledger_path {
        out.ledger.write_csv(p)?;
    }
    if let Some(p) = &cfg.output.audit {
        write_audit_csv(p, &audit_bootstrap(&out.ledger))?;
    }
    let summary = RunSummary::new(&out);
    if let Some(p) = &cfg.output.summary {
        write_json(p, "simulate-summary", &summary)?;
    }
    let text = format!(
        "status: {:?}\nsteps: {}  final dt: {:.4e}  horizon: {:.4e}\nsum E = {:.6e} (data {:.6e})\nsum H = {:.6e} (data {:.6e})\ntail indicator: E {:.3e}, H {:.3e}\n",
        summary.status,
        summary.steps,
        summary.final_dt,
        summary.horizon,
        summary.sum_e,
        summary.data_e,
        summary.sum_h,
        summary.data_h,
        summary.tail_e,
        summary.tail_h
    );
    Ok((out, text))
}

// ---------------------------------------------------------- audit energy

fn default_c() -> f64 {
    DEFAULT_ENVELOPE_C
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    /// Ledger CSV written by `simulate`.
    pub ledger: PathBuf,
    #[serde(default)]
    pub eps0: f64,
    #[serde(default)]
    pub eps1: f64,
    #[serde(default = "default_c")]
    pub envelope_c: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

pub fn run_audit(cfg: &AuditConfig, output: Option<&Path>) -> Result<String> {
    let out = output.map(Path::to_path_buf).map_or_else(|| require_output(&cfg.output, "audit-energy"), Ok)?;
    let ledger = EnergyLedger::read_csv(&cfg.ledger)?;
    let lines = audit_bootstrap(&ledger);
    write_audit_csv(&out, &lines)?;
    let main = main_estimate_check(&ledger, cfg.eps0, cfg.eps1, cfg.envelope_c);
    if let Some(p) = &cfg.summary {
        write_json(p, "audit-summary", &main)?;
    }
    let worst = lines
        .iter()
        .map(|l| l.implied_c)
        .filter(|c| c.is_finite())
        .fold(0.0, f64::max);
    Ok(format!(
        "{} audit lines written to {}\nlargest implied C: {worst:.4e}\nsum E = {:.6e} vs {:.6e} ({})\nsum H = {:.6e} vs {:.6e} ({})\n",
        lines.len(),
        out.display(),
        main.sum_e,
        main.bound_e,
        if main.pass_e { "pass" } else { "fail" },
        main.sum_h,
        main.bound_h,
        if main.pass_h { "pass" } else { "fail" },
    ))
}

// -------------------------------------------------------- threshold scan

pub fn run_threshold_scan(cfg: &ScanConfig, output: Option<&Path>) -> Result<(ThresholdScanResult, String)> {
    let out = output.map(Path::to_path_buf).map_or_else(|| require_output(&cfg.output, "threshold-scan"), Ok)?;
    let result = threshold_scan(cfg)?;
    write_json(&out, "threshold-scan", &result)?;
    if let Some(p) = &cfg.log {
        write_records_to_path(p, "threshold-scan-log", &result.records)?;
    }
    let mut text = format!("{}\n", result.criterion);
    for b in &result.brackets {
        text += &format!(
            "nu = {:.1e}: critical amplitude in [{:.4e}, {:.4e}]{}\n",
            b.nu,
            b.lo,
            b.hi,
            if b.reliable { "" } else { "  (unreliable)" }
        );
    }
    if let Some(f) = &result.exponent {
        text += &format!("exponent: {:.4} +- {:.4} (r2 {:.4})\n", f.slope, f.slope_half_width, f.r2);
    }
    Ok((result, text))
}

/// Reread a ledger CSV written earlier.
pub fn reread_ledger(path: &Path) -> Result<EnergyLedger> {
    EnergyLedger::read_csv(path)
}

/// Reread a verification CSV.
pub fn reread_verify(path: &Path) -> Result<Vec<VerifyRow>> {
    read_records_from_path(path)
}
