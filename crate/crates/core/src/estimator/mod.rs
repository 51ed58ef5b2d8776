//! From shot counts to Θ: fringe fits, reference subtraction, phase
//! unwrapping, straight-line fits and the joint angular fit.

mod bootstrap;
mod fringe;
mod joint;
mod linear;
pub mod optim;
mod report;

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sampler::{CampaignDataset, FringePoint};

pub use bootstrap::{bootstrap_ci, BootstrapResult};
pub use fringe::{
    fit_fringe_mle, fit_fringe_phase, fit_fringe_points, fringe_neg_log_likelihood, wrap_phase, FringeFit,
};
pub use joint::{
    angle_slopes, joint_fit_quadrupole, model_phase, two_stage_fit, AngleSlope, FitDiagnostics, GroupOffset,
    JointFitOptions, JointFitResult, OffsetHandling, TwoStageResult, PHASE_PER_GRADIENT_THETA,
};
pub use linear::{
    fit_frequency_vs_gradient, fit_phase_vs_time, weighted_line_fit, FrequencyGradientFit, FrequencyGradientPoint,
    LineFit, PhaseTimeFit, PhaseTimePoint,
};
pub use report::{theta_comparison_report, ComparisonReport, ComparisonRow};

/// A reference-subtracted phase, the input of all downstream fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub beta_nominal: f64,
    /// V/m²
    pub dez_dz: f64,
    /// 2·n·τ, s
    pub tau_total: f64,
    /// φ_total, rad, unwrapped.
    pub phase: f64,
    pub sigma: f64,
}

/// Fit results for one campaign cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPhase {
    pub point: PhasePoint,
    pub n_echo: usize,
    pub signal: FringeFit,
    pub reference: FringeFit,
    /// Unwrapping moved the phase by more than π/2 from its prediction.
    pub ambiguous: bool,
}

/// One cell of raw counts: signal and τ = 0 reference fringes.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCounts {
    pub beta_nominal: f64,
    pub dez_dz: f64,
    pub tau_total: f64,
    pub n_echo: usize,
    pub fringe: Vec<FringePoint>,
    pub reference_fringe: Vec<FringePoint>,
}

impl CellCounts {
    pub fn from_campaign(data: &CampaignDataset) -> Vec<CellCounts> {
        data.cells
            .iter()
            .map(|c| CellCounts {
                beta_nominal: c.beta_nominal,
                dez_dz: c.dez_dz,
                tau_total: c.tau_total,
                n_echo: c.fringe.context.n_echo,
                fringe: c.fringe.points.clone(),
                reference_fringe: c.reference_fringe.points.clone(),
            })
            .collect()
    }
}

impl From<crate::sampler::CsvCell> for CellCounts {
    fn from(c: crate::sampler::CsvCell) -> Self {
        CellCounts {
            beta_nominal: c.beta_nominal,
            dez_dz: c.dez_dz,
            tau_total: c.tau_total,
            n_echo: c.n_echo,
            fringe: c.fringe,
            reference_fringe: c.reference_fringe,
        }
    }
}

/// Fits signal and reference fringes of every cell and returns unwrapped
/// reference-subtracted phases in the input order.
pub fn fit_cell_phases(cells: &[CellCounts]) -> Result<Vec<CellPhase>> {
    let fits = cells
        .par_iter()
        .map(|c| Ok((fit_fringe_points(&c.fringe)?, fit_fringe_points(&c.reference_fringe)?)))
        .collect::<Result<Vec<_>>>()?;
    let wrapped: Vec<(f64, f64)> =
        fits.iter().map(|(s, r)| (wrap_phase(s.phase - r.phase), s.phase_sigma().hypot(r.phase_sigma()))).collect();
    let keys: Vec<(f64, f64, f64)> = cells.iter().map(|c| (c.beta_nominal, c.dez_dz, c.tau_total)).collect();
    let phases = unwrap_phases(&keys, &wrapped.iter().map(|w| w.0).collect::<Vec<_>>());
    Ok(cells
        .iter()
        .zip(fits)
        .zip(wrapped)
        .zip(phases)
        .map(|(((c, (signal, reference)), (_, sigma)), (phase, ambiguous))| CellPhase {
            point: PhasePoint { beta_nominal: c.beta_nominal, dez_dz: c.dez_dz, tau_total: c.tau_total, phase, sigma },
            n_echo: c.n_echo,
            signal,
            reference,
            ambiguous,
        })
        .collect())
}

/// Resolves 2π ambiguities of phases keyed by (β, gradient, τ_total).
///
/// Within each angle the phase is expected to grow like κ·g·t. Cells are
/// visited in order of increasing |g·t|; each is placed on the branch nearest
/// κ̂·g·t, where κ̂ is the least-squares rate through the origin of the cells
/// already placed (zero for the first one).
pub fn unwrap_phases(keys: &[(f64, f64, f64)], wrapped: &[f64]) -> Vec<(f64, bool)> {
    let mut out = vec![(0.0, false); keys.len()];
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry(k.0.to_bits()).or_default().push(i);
    }
    for idx in groups.values_mut() {
        idx.sort_by(|&a, &b| {
            let x = (keys[a].1 * keys[a].2).abs();
            let y = (keys[b].1 * keys[b].2).abs();
            x.total_cmp(&y).then(a.cmp(&b))
        });
        let (mut num, mut den) = (0.0, 0.0);
        for &i in idx.iter() {
            let gt = keys[i].1 * keys[i].2;
            let predicted = if den > 0.0 { num / den * gt } else { 0.0 };
            let phase = wrapped[i] + TAU * ((predicted - wrapped[i]) / TAU).round();
            out[i] = (phase, (phase - predicted).abs() > PI / 2.0);
            num += phase * gt;
            den += gt * gt;
        }
    }
    out
}

/// SHA-256 of the canonical JSON form of `value`, hex encoded.
pub fn content_digest<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Phase points of the cells that share `tau_total`, for angular fits.
pub fn points_at_time(phases: &[CellPhase], tau_total: f64) -> Vec<PhasePoint> {
    phases.iter().filter(|c| c.point.tau_total == tau_total).map(|c| c.point).collect()
}

pub(crate) fn check_points(points: &[PhasePoint]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Dataset("no phase points".into()));
    }
    for p in points {
        if !(p.sigma > 0.0) || !p.sigma.is_finite() || !p.phase.is_finite() {
            return Err(Error::Dataset(format!("invalid phase point {p:?}")));
        }
    }
    Ok(())
}
