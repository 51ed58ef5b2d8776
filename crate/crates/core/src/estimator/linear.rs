//! Weighted straight-line fits for phase-vs-time and frequency-vs-gradient.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::constants::Z_95;
use crate::error::{Error, Result};

/// Result of a weighted least-squares fit y = intercept + slope·x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_sigma: f64,
    pub intercept_sigma: f64,
    pub covariance: f64,
    pub chi2: f64,
    pub dof: usize,
}

impl LineFit {
    pub fn slope_ci95(&self) -> (f64, f64) {
        (self.slope - Z_95 * self.slope_sigma, self.slope + Z_95 * self.slope_sigma)
    }

    pub fn intercept_ci95(&self) -> (f64, f64) {
        (self.intercept - Z_95 * self.intercept_sigma, self.intercept + Z_95 * self.intercept_sigma)
    }

    pub fn reduced_chi2(&self) -> f64 {
        self.chi2 / self.dof as f64
    }
}

/// Weighted least squares with weights 1/σ².
pub fn weighted_line_fit(x: &[f64], y: &[f64], sigma: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() != sigma.len() {
        return Err(Error::InvalidArgument("x, y and sigma lengths differ".into()));
    }
    if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument("uncertainties must be positive and finite".into()));
    }
    let distinct = x.iter().any(|v| *v != x[0]);
    if x.len() < 2 || !distinct {
        return Err(Error::NonIdentifiable("line fit needs at least two distinct abscissae".into()));
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&xi, &yi), &si) in x.iter().zip(y).zip(sigma) {
        let w = 1.0 / (si * si);
        s += w;
        sx += w * xi;
        sy += w * yi;
        sxx += w * xi * xi;
        sxy += w * xi * yi;
    }
    // centred form keeps the normal equations well conditioned
    let xm = sx / s;
    let ym = sy / s;
    let sxx_c = sxx - s * xm * xm;
    let sxy_c = sxy - s * xm * ym;
    if !(sxx_c > 0.0) {
        return Err(Error::NonIdentifiable("singular line-fit design".into()));
    }
    let slope = sxy_c / sxx_c;
    let intercept = ym - slope * xm;
    let slope_var = 1.0 / sxx_c;
    let intercept_var = 1.0 / s + xm * xm / sxx_c;
    let chi2 = x.iter().zip(y).zip(sigma).map(|((&xi, &yi), &si)| ((yi - intercept - slope * xi) / si).powi(2)).sum();
    Ok(LineFit {
        slope,
        intercept,
        slope_sigma: slope_var.sqrt(),
        intercept_sigma: intercept_var.sqrt(),
        covariance: -xm / sxx_c,
        chi2,
        dof: x.len() - 2,
    })
}

/// One fitted phase at a given total precession time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimePoint {
    pub tau_total: f64,
    pub phase: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimeFit {
    /// rad/s
    pub slope: f64,
    /// slope/2π, Hz
    pub slope_hz: f64,
    pub ci95_hz: (f64, f64),
    pub line: LineFit,
}

/// Phase against total precession time; the slope is an angular frequency.
pub fn fit_phase_vs_time(points: &[PhaseTimePoint]) -> Result<PhaseTimeFit> {
    let x: Vec<f64> = points.iter().map(|p| p.tau_total).collect();
    let y: Vec<f64> = points.iter().map(|p| p.phase).collect();
    let s: Vec<f64> = points.iter().map(|p| p.sigma).collect();
    let line = weighted_line_fit(&x, &y, &s)?;
    let (lo, hi) = line.slope_ci95();
    Ok(PhaseTimeFit { slope: line.slope, slope_hz: line.slope / TAU, ci95_hz: (lo / TAU, hi / TAU), line })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGradientPoint {
    /// V/m²
    pub dez_dz: f64,
    /// Hz
    pub frequency: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGradientFit {
    /// Hz per V/m²
    pub slope: f64,
    pub ci95: (f64, f64),
    pub line: LineFit,
}

/// Frequency against field gradient. The intercept measures any offset not
/// proportional to the applied gradient.
pub fn fit_frequency_vs_gradient(points: &[FrequencyGradientPoint]) -> Result<FrequencyGradientFit> {
    let x: Vec<f64> = points.iter().map(|p| p.dez_dz).collect();
    let y: Vec<f64> = points.iter().map(|p| p.frequency).collect();
    let s: Vec<f64> = points.iter().map(|p| p.sigma).collect();
    let line = weighted_line_fit(&x, &y, &s)?;
    Ok(FrequencyGradientFit { slope: line.slope, ci95: line.slope_ci95(), line })
}
