//! Parametric bootstrap of the joint fit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fringe::{fit_fringe_phase, wrap_phase};
use super::joint::joint_fit_point;
use super::{CellCounts, CellPhase, JointFitOptions, PhasePoint};
use crate::error::{Error, Result};
use crate::sampler::{substream_seed, FringePoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub lo: f64,
    pub hi: f64,
    /// Successful replicate estimates, sorted.
    pub thetas: Vec<f64>,
    pub failures: usize,
}

const MAX_FAILURE_FRACTION: f64 = 0.05;

fn resample(points: &[FringePoint], rng: &mut ChaCha8Rng, exact: bool) -> Vec<FringePoint> {
    if exact {
        return points.to_vec();
    }
    points
        .iter()
        .map(|p| {
            let prob = (p.k_d / p.n_shots as f64).clamp(0.0, 1.0);
            let k = Binomial::new(p.n_shots as u64, prob).map(|b| b.sample(rng)).unwrap_or(0);
            FringePoint { k_d: k as f64, ..*p }
        })
        .collect()
}

fn replicate(
    cells: &[CellCounts],
    phases: &[CellPhase],
    options: &JointFitOptions,
    seed: u64,
    exact: bool,
) -> Result<f64> {
    let mut points: Vec<PhasePoint> = Vec::with_capacity(cells.len());
    for (i, (cell, orig)) in cells.iter().zip(phases).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, &[i as u64]));
        let sig = fit_fringe_phase(&resample(&cell.fringe, &mut rng, exact))?;
        let reference = fit_fringe_phase(&resample(&cell.reference_fringe, &mut rng, exact))?;
        // place the replicate on the branch of the original unwrapped phase
        let delta = wrap_phase(sig.0 - reference.0 - orig.point.phase);
        points.push(PhasePoint { phase: orig.point.phase + delta, ..orig.point });
    }
    Ok(joint_fit_point(&points, options)?.theta)
}

/// Percentile 95 % interval on Θ from `n_resamples` binomial resamplings of
/// every fringe point. `phases` are the fits of the original `cells`.
///
/// Exact-mode counts are expectations, so they are kept unchanged and the
/// interval collapses to the point estimate.
pub fn bootstrap_ci(
    cells: &[CellCounts],
    phases: &[CellPhase],
    options: &JointFitOptions,
    n_resamples: usize,
    seed: u64,
    exact: bool,
) -> Result<BootstrapResult> {
    if cells.len() != phases.len() {
        return Err(Error::InvalidArgument("cells and phases differ in length".into()));
    }
    if n_resamples < 2 {
        return Err(Error::InvalidArgument("at least two resamples are needed".into()));
    }
    let results: Vec<Result<f64>> = (0..n_resamples)
        .into_par_iter()
        .map(|r| replicate(cells, phases, options, substream_seed(seed, &[r as u64]), exact))
        .collect();
    let mut thetas: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let failures = n_resamples - thetas.len();
    if failures as f64 > MAX_FAILURE_FRACTION * n_resamples as f64 {
        return Err(Error::NonConvergence {
            iterations: n_resamples,
            message: format!("{failures} of {n_resamples} bootstrap replicates failed"),
        });
    }
    thetas.sort_by(f64::total_cmp);
    Ok(BootstrapResult { lo: percentile(&thetas, 0.025), hi: percentile(&thetas, 0.975), thetas, failures })
}

/// Linear interpolation between order statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}
