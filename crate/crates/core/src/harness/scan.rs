//! Threshold scans: bisection on the initial amplitude at fixed `nu = mu`.
//!
//! The classification is an operational convention: a run is stable when it
//! completes without tripping the blow-up detector and keeps
//! `sum_k E_k <= C D_E` and `sum_k H_k <= C D_H` over `[0, T]`, where `D_E`
//! and `D_H` are the initial-data functionals and `C` defaults to 4.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_exponent, LineFit};
use crate::error::{LabError, Result};
use crate::ledger::DEFAULT_ENVELOPE_C;
use crate::nonlinear::{run, InitConfig, RunConfig, RunOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Stable,
    Departed,
}

/// Amplitude bracket for one viscosity. `reliable` is false when the
/// initial bracket did not straddle the threshold or the sampled outcomes
/// were not monotone in amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub nu: f64,
    pub lo: f64,
    pub hi: f64,
    pub reliable: bool,
    pub monotone: bool,
}

impl Bracket {
    pub fn center(&self) -> f64 {
        (self.lo * self.hi).sqrt()
    }
}

/// One classified amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub amplitude: f64,
    pub outcome: Outcome,
}

/// True when no stable amplitude lies above a departed one.
pub fn outcomes_monotone(probes: &[Probe]) -> bool {
    let mut sorted: Vec<&Probe> = probes.iter().collect();
    sorted.sort_by(|a, b| a.amplitude.total_cmp(&b.amplitude));
    let first_departed = sorted.iter().position(|p| p.outcome == Outcome::Departed);
    match first_departed {
        None => true,
        Some(i) => sorted[i..].iter().all(|p| p.outcome == Outcome::Departed),
    }
}

/// Geometric bisection of `[lo, hi]` until `hi / lo <= ratio`. Amplitudes in
/// `extra` are classified first and enter the monotonicity check. A zero
/// lower end is replaced by `hi / 1e6` for the bisection.
pub fn bisect_threshold(
    nu: f64,
    lo: f64,
    hi: f64,
    ratio: f64,
    extra: &[f64],
    classify: &mut dyn FnMut(f64) -> Result<Outcome>,
) -> Result<(Bracket, Vec<Probe>)> {
    if !(lo >= 0.0 && hi > lo && ratio > 1.0) {
        return Err(LabError::Config(format!(
            "need 0 <= lo < hi and ratio > 1, got lo = {lo}, hi = {hi}, ratio = {ratio}"
        )));
    }
    let mut probes = Vec::new();
    let mut probe = |a: f64, probes: &mut Vec<Probe>| -> Result<Outcome> {
        let outcome = classify(a)?;
        probes.push(Probe { amplitude: a, outcome });
        Ok(outcome)
    };
    for &a in extra {
        probe(a, &mut probes)?;
    }
    let mut lo = if lo > 0.0 { lo } else { hi * 1e-6 };
    let mut hi = hi;
    let lo_ok = probe(lo, &mut probes)? == Outcome::Stable;
    let hi_bad = probe(hi, &mut probes)? == Outcome::Departed;
    let straddles = lo_ok && hi_bad;
    if straddles {
        while hi / lo > ratio {
            let mid = (lo * hi).sqrt();
            match probe(mid, &mut probes)? {
                Outcome::Stable => lo = mid,
                Outcome::Departed => hi = mid,
            }
        }
    }
    let monotone = outcomes_monotone(&probes);
    Ok((
        Bracket {
            nu,
            lo,
            hi,
            reliable: straddles && monotone,
            monotone,
        },
        probes,
    ))
}

fn default_ratio() -> f64 {
    1.25
}

fn default_horizon_factor() -> f64 {
    2.0
}

fn default_envelope() -> f64 {
    DEFAULT_ENVELOPE_C
}

fn default_n() -> usize {
    128
}

fn default_k_max() -> usize {
    16
}

fn default_dt() -> f64 {
    0.02
}

fn default_sample_every() -> usize {
    10
}

fn default_blowup() -> f64 {
    1e6
}

/// Configuration of the `threshold-scan` subcommand. An amplitude `a` sets
/// the initial data functionals to `D_E = a m^{1/2}` and
/// `D_H = a m^{11/12}` with `m = min(nu, mu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// Values of `nu = mu`.
    pub nu: Vec<f64>,
    /// Separate diffusivity for off-diagonal sweeps; `nu = mu` when absent.
    #[serde(default)]
    pub mu: Option<f64>,
    pub amplitude_lo: f64,
    pub amplitude_hi: f64,
    /// Amplitudes classified in addition to the bisection points.
    #[serde(default)]
    pub probes: Vec<f64>,
    /// Target `hi / lo` of the final bracket.
    #[serde(default = "default_ratio")]
    pub bracket_ratio: f64,
    /// Horizon `T = horizon_factor nu^{-1/2}`.
    #[serde(default = "default_horizon_factor")]
    pub horizon_factor: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default = "default_envelope")]
    pub envelope_c: f64,
    #[serde(default = "default_blowup")]
    pub blowup_factor: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// CSV log of every classified run.
    #[serde(default)]
    pub log: Option<PathBuf>,
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nu.is_empty() {
            return Err(LabError::Config("threshold scan needs at least one nu".into()));
        }
        if !(self.amplitude_lo >= 0.0 && self.amplitude_hi > self.amplitude_lo) {
            return Err(LabError::Config("need 0 <= amplitude_lo < amplitude_hi".into()));
        }
        if !(self.bracket_ratio > 1.0) || !(self.envelope_c > 0.0) || !(self.horizon_factor > 0.0) {
            return Err(LabError::Config(
                "bracket_ratio must exceed 1, envelope_c and horizon_factor must be positive".into(),
            ));
        }
        for &nu in &self.nu {
            self.run_config(nu, 0.0).validate()?;
        }
        Ok(())
    }

    pub fn horizon(&self, nu: f64) -> f64 {
        self.horizon_factor / nu.sqrt()
    }

    /// Nonlinear run at amplitude `amplitude`, stopped once it leaves the envelope.
    pub fn run_config(&self, nu: f64, amplitude: f64) -> RunConfig {
        let mu = self.mu.unwrap_or(nu);
        let m = nu.min(mu);
        RunConfig {
            n: self.n,
            k_max: self.k_max,
            nu,
            mu,
            eps0: 0.0,
            eps1: 0.0,
            velocity_amplitude: Some(amplitude * m.sqrt()),
            theta_amplitude: Some(amplitude * m.powf(11.0 / 12.0)),
            init: self.init.clone(),
            horizon: self.horizon(nu),
            dt: self.dt,
            sample_every: self.sample_every,
            seed: self.seed,
            nonlinear: true,
            blowup_factor: self.blowup_factor,
            envelope_stop: Some(self.envelope_c),
            output: Default::default(),
        }
    }
}

/// Log line for one classified run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub nu: f64,
    pub amplitude: f64,
    pub outcome: Outcome,
    pub departed: bool,
    pub sum_e: f64,
    pub bound_e: f64,
    pub sum_h: f64,
    pub bound_h: f64,
    pub horizon: f64,
    pub steps: usize,
}

/// Envelope classification of a finished run.
pub fn classify_run(out: &RunOutput, envelope_c: f64) -> Outcome {
    let l = &out.ledger;
    let within = l.sum_e() <= envelope_c * l.velocity_data_bound()
        && l.sum_h() <= envelope_c * l.temperature_data_bound();
    if !out.status.departed() && within {
        Outcome::Stable
    } else {
        Outcome::Departed
    }
}

/// Run and classify one amplitude.
pub fn classify_amplitude(cfg: &ScanConfig, nu: f64, amplitude: f64) -> Result<ScanRecord> {
    let rc = cfg.run_config(nu, amplitude);
    let out = run(&rc)?;
    let l = &out.ledger;
    Ok(ScanRecord {
        nu,
        amplitude,
        outcome: classify_run(&out, cfg.envelope_c),
        departed: out.status.departed(),
        sum_e: l.sum_e(),
        bound_e: l.velocity_data_bound(),
        sum_h: l.sum_h(),
        bound_h: l.temperature_data_bound(),
        horizon: rc.horizon,
        steps: out.steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScanResult {
    /// Human-readable statement of the stability convention.
    pub criterion: String,
    pub brackets: Vec<Bracket>,
    pub records: Vec<ScanRecord>,
    /// Fit of `ln(critical D_E)` on `ln nu` over reliable brackets, to be
    /// compared with the envelope exponent 1/2.
    pub exponent: Option<LineFit>,
    /// Fit of `ln(critical amplitude)` on `ln nu`.
    pub amplitude_exponent: Option<LineFit>,
}

/// Bisect every viscosity (in parallel) and fit the critical-amplitude
/// exponent when at least three brackets are reliable.
pub fn threshold_scan(cfg: &ScanConfig) -> Result<ThresholdScanResult> {
    cfg.validate()?;
    let per_nu: Vec<Result<(Bracket, Vec<ScanRecord>)>> = cfg
        .nu
        .par_iter()
        .map(|&nu| {
            let mut records = Vec::new();
            let (bracket, _) = bisect_threshold(
                nu,
                cfg.amplitude_lo,
                cfg.amplitude_hi,
                cfg.bracket_ratio,
                &cfg.probes,
                &mut |a| {
                    let rec = classify_amplitude(cfg, nu, a)?;
                    let o = rec.outcome;
                    records.push(rec);
                    Ok(o)
                },
            )?;
            Ok((bracket, records))
        })
        .collect();
    let mut brackets = Vec::new();
    let mut records = Vec::new();
    for r in per_nu {
        let (b, recs) = r?;
        brackets.push(b);
        records.extend(recs);
    }
    let pts: Vec<(f64, f64)> = brackets
        .iter()
        .filter(|b| b.reliable)
        .map(|b| (b.nu, b.center()))
        .collect();
    let (exponent, amplitude_exponent) = if pts.len() >= 3 {
        let de: Vec<(f64, f64)> = pts
            .iter()
            .map(|&(nu, a)| (nu, a * nu.min(cfg.mu.unwrap_or(nu)).sqrt()))
            .collect();
        (Some(fit_exponent(&de)?), Some(fit_exponent(&pts)?))
    } else {
        (None, None)
    };
    Ok(ThresholdScanResult {
        criterion: format!(
            "stable: no blow-up and sum E_k <= {c} D_E and sum H_k <= {c} D_H over [0, {f} nu^(-1/2)] \
             (operational convention); amplitude a: D_E = a min(nu,mu)^(1/2), D_H = a min(nu,mu)^(11/12)",
            c = cfg.envelope_c,
            f = cfg.horizon_factor
        ),
        brackets,
        records,
        exponent,
        amplitude_exponent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_brackets_known_cutoff() {
        let mut calls = 0;
        let (b, probes) = bisect_threshold(1e-3, 1e-4, 1.0, 1.25, &[], &mut |a| {
            calls += 1;
            Ok(if a <= 0.01 { Outcome::Stable } else { Outcome::Departed })
        })
        .unwrap();
        assert!(b.reliable && b.lo <= 0.01 && 0.01 < b.hi && b.hi / b.lo <= 1.25);
        assert_eq!(calls, probes.len());
    }

    #[test]
    fn non_monotone_outcomes_are_flagged() {
        let (b, _) = bisect_threshold(1e-3, 1e-3, 1.0, 1.25, &[0.5], &mut |a| {
            Ok(if a <= 0.01 || (a - 0.5).abs() < 1e-12 { Outcome::Stable } else { Outcome::Departed })
        })
        .unwrap();
        assert!(!b.monotone && !b.reliable);
    }

    #[test]
    fn bracket_that_misses_the_threshold_is_unreliable() {
        let (b, _) = bisect_threshold(1e-3, 0.1, 1.0, 1.25, &[], &mut |_| Ok(Outcome::Stable)).unwrap();
        assert!(!b.reliable && b.monotone);
    }
}
