//! Least-squares lines and power-law exponent fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{LabError, Result};

/// Ordinary least-squares line `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Half-width of the 95% confidence interval on the slope.
    pub slope_half_width: f64,
    pub points: usize,
}

pub fn line_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(LabError::Shape {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let m = xs.len();
    if m < 3 {
        return Err(LabError::TooFewPoints(m));
    }
    let mf = m as f64;
    let mx = xs.iter().sum::<f64>() / mf;
    let my = ys.iter().sum::<f64>() / mf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LabError::Config("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy > 0.0 {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let dof = mf - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| LabError::Numerical(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(LineFit {
        slope,
        intercept,
        r2,
        slope_half_width: t * se,
        points: m,
    })
}

/// Fit `y = e^c x^slope` by least squares on `(ln x, ln y)`.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 3 {
        return Err(LabError::TooFewPoints(points.len()));
    }
    if let Some(p) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(LabError::Config(format!(
            "exponent fit needs positive pairs, got ({}, {})",
            p.0, p.1
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    line_fit(&xs, &ys)
}
