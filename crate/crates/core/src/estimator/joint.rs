//! Joint fit of all reference-subtracted phases to
//! φ = t·A·g·Θ·G(β + β₀) + c, with A = 9e·a₀²/(20ħ), G the angular factor
//! and one nuisance offset c per (angle, precession time) group.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::linear::{
    fit_frequency_vs_gradient, fit_phase_vs_time, weighted_line_fit, FrequencyGradientPoint, PhaseTimePoint,
};
use super::optim::{levenberg_marquardt, nelder_mead};
use super::{check_points, wrap_phase, PhasePoint};
use crate::atom::angular_factor;
use crate::constants::{CHI2_1DOF_95, E_A0_SQUARED, HBAR};
use crate::error::{Error, Result};

/// Phase rate per unit gradient and unit Θ at G = 1, rad·m²/(V·s·e·a₀²).
pub const PHASE_PER_GRADIENT_THETA: f64 = 9.0 / (20.0 * HBAR) * E_A0_SQUARED;

/// How the per-group phase offsets are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetHandling {
    /// Free offsets fitted jointly with Θ.
    #[default]
    PerAngle,
    /// Subtract the zero-gradient intercept of a line fit per group, then fit
    /// without offsets.
    SubtractIntercept,
    /// Assume no offsets.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointFitOptions {
    pub fit_epsilon1: bool,
    /// ε₁ when frozen.
    pub epsilon1: f64,
    /// Azimuth of the field projection, rad.
    pub alpha: f64,
    pub offsets: OffsetHandling,
    /// Half-width of the β₀ start scan, rad.
    pub beta0_search: f64,
    /// Number of samples stored from the Θ profile.
    pub profile_samples: usize,
}

impl Default for JointFitOptions {
    fn default() -> Self {
        JointFitOptions {
            fit_epsilon1: false,
            epsilon1: 0.0,
            alpha: std::f64::consts::FRAC_PI_4,
            offsets: OffsetHandling::PerAngle,
            beta0_search: 0.5,
            profile_samples: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub chi2: f64,
    pub dof: usize,
    /// (Θ, Δχ²) along the profile.
    pub profile: Vec<(f64, f64)>,
}

/// Offset of one (angle, time) group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupOffset {
    pub beta_nominal: f64,
    pub tau_total: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFitResult {
    pub theta: f64,
    pub beta0: f64,
    pub epsilon1: f64,
    pub per_angle_offsets: Vec<GroupOffset>,
    pub ci95_theta: (f64, f64),
    /// Curvature standard errors of (Θ, β₀, ε₁); ε₁ is 0 when frozen.
    pub sigma: [f64; 3],
    pub fit_diagnostics: FitDiagnostics,
}

/// Model phase at one point.
pub fn model_phase(p: &PhasePoint, theta: f64, beta0: f64, epsilon1: f64, alpha: f64) -> f64 {
    p.tau_total * PHASE_PER_GRADIENT_THETA * p.dez_dz * theta * angular_factor(p.beta_nominal + beta0, epsilon1, alpha)
}

struct Setup<'a> {
    points: &'a [PhasePoint],
    /// group index per point, when offsets are free
    group: Vec<usize>,
    groups: Vec<(f64, f64)>,
    free_offsets: bool,
    fit_eps: bool,
    eps_fixed: f64,
    cos2a: f64,
    alpha: f64,
}

impl Setup<'_> {
    fn n_core(&self) -> usize {
        if self.fit_eps {
            3
        } else {
            2
        }
    }

    fn n_params(&self) -> usize {
        self.n_core() + if self.free_offsets { self.groups.len() } else { 0 }
    }

    fn eps(&self, x: &[f64]) -> f64 {
        if self.fit_eps {
            x[2]
        } else {
            self.eps_fixed
        }
    }

    /// Weighted residuals and Jacobian; entries in `fixed` are held constant
    /// (their Jacobian columns are dropped).
    fn evaluate(&self, x: &[f64], fixed: Option<usize>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.points.len();
        let np = self.n_params();
        let cols: Vec<usize> = (0..np).filter(|&c| Some(c) != fixed).collect();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, cols.len());
        let (theta, beta0, eps) = (x[0], x[1], self.eps(x));
        for (i, p) in self.points.iter().enumerate() {
            let beta = p.beta_nominal + beta0;
            let k = p.tau_total * PHASE_PER_GRADIENT_THETA * p.dez_dz;
            let g = angular_factor(beta, eps, self.alpha);
            let s2 = (2.0 * beta).sin();
            let dg_dbeta = -3.0 * s2 - eps * s2 * self.cos2a;
            let dg_deps = -beta.sin().powi(2) * self.cos2a;
            let c = if self.free_offsets { x[self.n_core() + self.group[i]] } else { 0.0 };
            let model = k * theta * g + c;
            r[i] = wrap_phase(model - p.phase) / p.sigma;
            let mut full = vec![0.0; np];
            full[0] = k * g;
            full[1] = k * theta * dg_dbeta;
            if self.fit_eps {
                full[2] = k * theta * dg_deps;
            }
            if self.free_offsets {
                full[self.n_core() + self.group[i]] = 1.0;
            }
            for (jc, &c) in cols.iter().enumerate() {
                j[(i, jc)] = full[c] / p.sigma;
            }
        }
        (r, j)
    }

    fn chi2(&self, x: &[f64]) -> f64 {
        self.evaluate(x, Some(usize::MAX)).0.norm_squared()
    }

    /// Best offsets (and Θ, Θ·ε₁) for fixed β₀ by linear least squares on
    /// the unwrapped phases.
    fn linear_start(&self, beta0: f64) -> Option<(Vec<f64>, f64)> {
        let nc = if self.fit_eps { 2 } else { 1 };
        let ng = if self.free_offsets { self.groups.len() } else { 0 };
        let n = self.points.len();
        let mut a = DMatrix::zeros(n, nc + ng);
        let mut b = DVector::zeros(n);
        for (i, p) in self.points.iter().enumerate() {
            let beta = p.beta_nominal + beta0;
            let k = p.tau_total * PHASE_PER_GRADIENT_THETA * p.dez_dz / p.sigma;
            a[(i, 0)] = k * angular_factor(beta, if self.fit_eps { 0.0 } else { self.eps_fixed }, self.alpha);
            if self.fit_eps {
                a[(i, 1)] = -k * beta.sin().powi(2) * self.cos2a;
            }
            if self.free_offsets {
                a[(i, nc + self.group[i])] = 1.0 / p.sigma;
            }
            b[i] = p.phase / p.sigma;
        }
        let sol = a.clone().svd(true, true).solve(&b, 1e-12).ok()?;
        let chi2 = (&a * &sol - &b).norm_squared();
        let theta = sol[0];
        let mut x = vec![theta, beta0];
        if self.fit_eps {
            x.push(if theta != 0.0 { sol[1] / theta } else { 0.0 });
        }
        x.extend(sol.iter().skip(nc));
        Some((x, chi2))
    }
}

fn group_points(points: &[PhasePoint]) -> (Vec<usize>, Vec<(f64, f64)>) {
    let mut index: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let mut groups = Vec::new();
    let group = points
        .iter()
        .map(|p| {
            *index.entry((p.beta_nominal.to_bits(), p.tau_total.to_bits())).or_insert_with(|| {
                groups.push((p.beta_nominal, p.tau_total));
                groups.len() - 1
            })
        })
        .collect();
    (group, groups)
}

fn check_design(points: &[PhasePoint], options: &JointFitOptions) -> Result<()> {
    check_points(points)?;
    let mut angles: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for p in points {
        angles.entry(p.beta_nominal.to_bits()).or_default().push(p.dez_dz);
    }
    if angles.len() < 2 {
        return Err(Error::NonIdentifiable("Θ and β₀ need at least two distinct angles".into()));
    }
    for (beta, grads) in &angles {
        if !grads.iter().any(|g| *g != grads[0]) {
            return Err(Error::NonIdentifiable(format!(
                "angle {} has fewer than two distinct gradients",
                f64::from_bits(*beta)
            )));
        }
    }
    if options.fit_epsilon1 {
        if (2.0 * options.alpha).cos().abs() < 1e-6 {
            return Err(Error::NonIdentifiable("ε₁ has no effect at cos 2α = 0".into()));
        }
        if angles.len() < 3 {
            return Err(Error::NonIdentifiable("fitting ε₁ needs at least three angles".into()));
        }
    }
    Ok(())
}

/// Subtracts the zero-gradient intercept of each (angle, time) group.
fn subtract_intercepts(points: &[PhasePoint]) -> Result<(Vec<PhasePoint>, Vec<GroupOffset>)> {
    let (group, groups) = group_points(points);
    let mut offsets = Vec::with_capacity(groups.len());
    let mut out = points.to_vec();
    for (gi, &(beta_nominal, tau_total)) in groups.iter().enumerate() {
        let members: Vec<usize> = (0..points.len()).filter(|&i| group[i] == gi).collect();
        let x: Vec<f64> = members.iter().map(|&i| points[i].dez_dz).collect();
        let y: Vec<f64> = members.iter().map(|&i| points[i].phase).collect();
        let s: Vec<f64> = members.iter().map(|&i| points[i].sigma).collect();
        let line = weighted_line_fit(&x, &y, &s)?;
        for &i in &members {
            out[i].phase -= line.intercept;
        }
        offsets.push(GroupOffset { beta_nominal, tau_total, offset: line.intercept });
    }
    Ok((out, offsets))
}

/// Maximum-likelihood fit of Θ, β₀ (and optionally ε₁) to all phases, with
/// a profile-likelihood 95 % interval on Θ.
pub fn joint_fit_quadrupole(points: &[PhasePoint], options: &JointFitOptions) -> Result<JointFitResult> {
    fit_impl(points, options, true)
}

/// Point estimate only, without the profile interval.
pub(crate) fn joint_fit_point(points: &[PhasePoint], options: &JointFitOptions) -> Result<JointFitResult> {
    fit_impl(points, options, false)
}

fn fit_impl(points: &[PhasePoint], options: &JointFitOptions, with_profile: bool) -> Result<JointFitResult> {
    check_design(points, options)?;
    let (work, subtracted) = match options.offsets {
        OffsetHandling::SubtractIntercept => {
            let (p, o) = subtract_intercepts(points)?;
            (p, Some(o))
        }
        _ => (points.to_vec(), None),
    };
    let (group, groups) = group_points(&work);
    let setup = Setup {
        points: &work,
        group,
        groups,
        free_offsets: options.offsets == OffsetHandling::PerAngle,
        fit_eps: options.fit_epsilon1,
        eps_fixed: options.epsilon1,
        cos2a: (2.0 * options.alpha).cos(),
        alpha: options.alpha,
    };

    // start: scan β₀ with the remaining parameters solved linearly
    let scan = 201;
    let mut start: Option<(Vec<f64>, f64)> = None;
    for i in 0..scan {
        let b0 = -options.beta0_search + 2.0 * options.beta0_search * i as f64 / (scan - 1) as f64;
        if let Some((x, c)) = setup.linear_start(b0) {
            if start.as_ref().is_none_or(|s| c < s.1) {
                start = Some((x, c));
            }
        }
    }
    let (x0, _) = start.ok_or_else(|| Error::NonIdentifiable("linear start failed at every β₀".into()))?;

    let nc = setup.n_core();
    let core_steps: Vec<f64> = (0..nc).map(|i| if i == 0 { 0.05 * x0[0].abs().max(0.1) } else { 0.02 }).collect();
    let profiled = |core: &[f64]| -> f64 {
        let mut x = x0.clone();
        x[..nc].copy_from_slice(core);
        if setup.free_offsets {
            fit_offsets(&setup, &mut x);
        }
        setup.chi2(&x)
    };
    let nm = nelder_mead(profiled, &x0[..nc], &core_steps, 1e-12, 2000);
    let mut x1 = x0.clone();
    x1[..nc].copy_from_slice(&nm.x);
    if setup.free_offsets {
        fit_offsets(&setup, &mut x1);
    }
    let lm = levenberg_marquardt(|x| setup.evaluate(x, None), &x1, 500);
    if !lm.converged {
        return Err(Error::NonConvergence {
            iterations: nm.iterations + lm.iterations,
            message: format!("joint fit stalled at chi2 = {}", lm.chi2),
        });
    }
    let x = lm.x.clone();
    let cov = lm
        .normal_matrix
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NonIdentifiable("singular Fisher information".into()))?;
    let var_theta = cov[(0, 0)];
    if !(var_theta > 0.0) || !var_theta.is_finite() || var_theta.sqrt() > 1e3 * x[0].abs().max(1.0) {
        return Err(Error::NonIdentifiable("Θ is unconstrained by the data".into()));
    }
    let sigma =
        [var_theta.sqrt(), cov[(1, 1)].max(0.0).sqrt(), if setup.fit_eps { cov[(2, 2)].max(0.0).sqrt() } else { 0.0 }];

    let profile_at = |theta: f64, from: &[f64]| -> (f64, Vec<f64>) {
        let mut start = from.to_vec();
        start[0] = theta;
        let reduced: Vec<f64> = start.iter().skip(1).copied().collect();
        let fit = levenberg_marquardt(
            |y| {
                let mut full = vec![theta];
                full.extend_from_slice(y);
                setup.evaluate(&full, Some(0))
            },
            &reduced,
            500,
        );
        let mut full = vec![theta];
        full.extend(fit.x);
        (fit.chi2, full)
    };
    let chi2_min = lm.chi2;
    let bound = |dir: f64| -> f64 {
        let excess = |theta: f64| profile_at(theta, &x).0 - chi2_min - CHI2_1DOF_95;
        let mut inner = 0.0;
        let mut outer = 1.96 * sigma[0];
        let mut tries = 0;
        while excess(x[0] + dir * outer) < 0.0 && tries < 40 {
            inner = outer;
            outer *= 1.6;
            tries += 1;
        }
        for _ in 0..60 {
            if outer - inner <= 1e-10 * outer {
                break;
            }
            let mid = 0.5 * (inner + outer);
            if excess(x[0] + dir * mid) >= 0.0 {
                outer = mid;
            } else {
                inner = mid;
            }
        }
        x[0] + dir * 0.5 * (inner + outer)
    };
    let (lo, hi, profile) = if with_profile {
        let lo = bound(-1.0);
        let hi = bound(1.0);
        let samples = options.profile_samples.max(2);
        let span = (hi - lo).max(1e-12);
        let profile = (0..samples)
            .map(|i| {
                let t = lo - 0.25 * span + 1.5 * span * i as f64 / (samples - 1) as f64;
                (t, profile_at(t, &x).0 - chi2_min)
            })
            .collect();
        (lo, hi, profile)
    } else {
        (x[0] - 1.96 * sigma[0], x[0] + 1.96 * sigma[0], Vec::new())
    };

    let per_angle_offsets = match subtracted {
        Some(o) => o,
        None => setup
            .groups
            .iter()
            .enumerate()
            .map(|(g, &(beta_nominal, tau_total))| GroupOffset {
                beta_nominal,
                tau_total,
                offset: if setup.free_offsets { x[nc + g] } else { 0.0 },
            })
            .collect(),
    };
    Ok(JointFitResult {
        theta: x[0],
        beta0: x[1],
        epsilon1: setup.eps(&x),
        per_angle_offsets,
        ci95_theta: (lo.min(x[0]), hi.max(x[0])),
        sigma,
        fit_diagnostics: FitDiagnostics {
            iterations: nm.iterations + lm.iterations,
            converged: true,
            chi2: chi2_min,
            dof: work.len().saturating_sub(setup.n_params()),
            profile,
        },
    })
}

/// Weighted mean of wrapped residuals per group, iterated to the
/// least-squares offset.
fn fit_offsets(setup: &Setup<'_>, x: &mut [f64]) {
    let nc = setup.n_core();
    for _ in 0..3 {
        let mut num = vec![0.0; setup.groups.len()];
        let mut den = vec![0.0; setup.groups.len()];
        let eps = setup.eps(x);
        for (i, p) in setup.points.iter().enumerate() {
            let g = setup.group[i];
            let model = model_phase(p, x[0], x[1], eps, setup.alpha) + x[nc + g];
            let w = 1.0 / (p.sigma * p.sigma);
            num[g] += w * wrap_phase(p.phase - model);
            den[g] += w;
        }
        for g in 0..setup.groups.len() {
            x[nc + g] += num[g] / den[g];
        }
    }
}

/// Per-angle result of the staged analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSlope {
    pub beta_nominal: f64,
    /// Frequency per gradient, Hz/(V/m²).
    pub slope: f64,
    pub sigma: f64,
    /// Frequency at zero gradient, Hz.
    pub intercept: f64,
    pub intercept_sigma: f64,
    pub reduced_chi2: f64,
    pub frequencies: Vec<FrequencyGradientPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageResult {
    pub theta: f64,
    pub beta0: f64,
    pub epsilon1: f64,
    pub theta_sigma: f64,
    pub angles: Vec<AngleSlope>,
}

/// Frequency of each (angle, gradient) pair: the phase-vs-time slope when
/// several times were measured, φ/(2πt) otherwise.
fn frequency_of(pts: &[PhasePoint]) -> Result<(f64, f64)> {
    let mut times: Vec<f64> = pts.iter().map(|p| p.tau_total).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.len() >= 2 {
        let tp: Vec<PhaseTimePoint> =
            pts.iter().map(|p| PhaseTimePoint { tau_total: p.tau_total, phase: p.phase, sigma: p.sigma }).collect();
        let fit = fit_phase_vs_time(&tp)?;
        Ok((fit.slope_hz, fit.line.slope_sigma / TAU))
    } else if times[0] > 0.0 {
        let w: f64 = pts.iter().map(|p| 1.0 / (p.sigma * p.sigma)).sum();
        let mean: f64 = pts.iter().map(|p| p.phase / (p.sigma * p.sigma)).sum::<f64>() / w;
        Ok((mean / (TAU * times[0]), 1.0 / (w.sqrt() * TAU * times[0])))
    } else {
        Err(Error::NonIdentifiable("no precession time to convert phase to frequency".into()))
    }
}

/// Frequency-vs-gradient line for every angle measured at two or more
/// distinct gradients. Other angles are skipped.
pub fn angle_slopes(points: &[PhasePoint]) -> Result<Vec<AngleSlope>> {
    check_points(points)?;
    let mut by_angle: BTreeMap<u64, BTreeMap<u64, Vec<PhasePoint>>> = BTreeMap::new();
    for p in points {
        by_angle.entry(p.beta_nominal.to_bits()).or_default().entry(p.dez_dz.to_bits()).or_default().push(*p);
    }
    let mut angles = Vec::new();
    for (beta_bits, grads) in by_angle.iter().filter(|(_, g)| g.len() >= 2) {
        let freqs = grads
            .iter()
            .map(|(g_bits, pts)| {
                let (frequency, sigma) = frequency_of(pts)?;
                Ok(FrequencyGradientPoint { dez_dz: f64::from_bits(*g_bits), frequency, sigma })
            })
            .collect::<Result<Vec<_>>>()?;
        let fit = fit_frequency_vs_gradient(&freqs)?;
        angles.push(AngleSlope {
            beta_nominal: f64::from_bits(*beta_bits),
            slope: fit.slope,
            sigma: fit.line.slope_sigma,
            intercept: fit.line.intercept,
            intercept_sigma: fit.line.intercept_sigma,
            reduced_chi2: fit.line.reduced_chi2(),
            frequencies: freqs,
        });
    }
    Ok(angles)
}

/// Phase → frequency (per angle and gradient) → slope against gradient (per
/// angle) → Θ and β₀ from the angular dependence of the slopes.
pub fn two_stage_fit(points: &[PhasePoint], options: &JointFitOptions) -> Result<TwoStageResult> {
    check_design(points, options)?;
    let angles = angle_slopes(points)?;
    // slope_k = A/(2π)·Θ·G(β_k + β₀)
    let a = PHASE_PER_GRADIENT_THETA / TAU;
    let fit_eps = options.fit_epsilon1;
    let cos2a = (2.0 * options.alpha).cos();
    let residuals = |x: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let eps = if fit_eps { x[2] } else { options.epsilon1 };
        let np = x.len();
        let mut r = DVector::zeros(angles.len());
        let mut j = DMatrix::zeros(angles.len(), np);
        for (i, s) in angles.iter().enumerate() {
            let beta = s.beta_nominal + x[1];
            let g = angular_factor(beta, eps, options.alpha);
            let s2 = (2.0 * beta).sin();
            r[i] = (a * x[0] * g - s.slope) / s.sigma;
            j[(i, 0)] = a * g / s.sigma;
            j[(i, 1)] = a * x[0] * (-3.0 * s2 - eps * s2 * cos2a) / s.sigma;
            if fit_eps {
                j[(i, 2)] = -a * x[0] * beta.sin().powi(2) * cos2a / s.sigma;
            }
        }
        (r, j)
    };
    // start from the best β₀ on a grid with Θ solved linearly
    let mut best = (f64::INFINITY, vec![0.0, 0.0]);
    for i in 0..201 {
        let b0 = -options.beta0_search + 2.0 * options.beta0_search * i as f64 / 200.0;
        let (mut num, mut den) = (0.0, 0.0);
        for s in &angles {
            let g = a * angular_factor(s.beta_nominal + b0, options.epsilon1, options.alpha);
            num += g * s.slope / (s.sigma * s.sigma);
            den += g * g / (s.sigma * s.sigma);
        }
        if den > 0.0 {
            let x = vec![num / den, b0];
            let c = residuals(&x).0.norm_squared();
            if c < best.0 {
                best = (c, x);
            }
        }
    }
    let mut x0 = best.1;
    if fit_eps {
        x0.push(options.epsilon1);
    }
    let lm = levenberg_marquardt(residuals, &x0, 500);
    if !lm.converged {
        return Err(Error::NonConvergence { iterations: lm.iterations, message: "angular slope fit".into() });
    }
    let cov = lm.normal_matrix.clone().try_inverse();
    let theta_sigma = cov.map(|c| c[(0, 0)].max(0.0).sqrt()).unwrap_or(f64::NAN);
    Ok(TwoStageResult {
        theta: lm.x[0],
        beta0: lm.x[1],
        epsilon1: if fit_eps { lm.x[2] } else { options.epsilon1 },
        theta_sigma,
        angles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(theta: f64, beta0: f64, offsets: &[f64]) -> Vec<PhasePoint> {
        let betas = [0.0, 0.26, 0.52, 0.79, 1.05, 1.31, 1.57];
        let mut out = Vec::new();
        for (k, &b) in betas.iter().enumerate() {
            for &g in &[0.5e8, 1.0e8, 1.5e8] {
                let mut p = PhasePoint { beta_nominal: b, dez_dz: g, tau_total: 4e-3, phase: 0.0, sigma: 0.03 };
                p.phase = model_phase(&p, theta, beta0, 0.0, std::f64::consts::FRAC_PI_4)
                    + offsets.get(k).copied().unwrap_or(0.0);
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let pts = synthetic(2.9, 0.08, &[]);
        let (group, groups) = group_points(&pts);
        let setup = Setup {
            points: &pts,
            group,
            groups,
            free_offsets: true,
            fit_eps: true,
            eps_fixed: 0.0,
            cos2a: 0.4,
            alpha: 0.4f64.acos() / 2.0,
        };
        let mut x = vec![3.0, 0.1, 0.05];
        x.extend((0..setup.groups.len()).map(|g| 0.01 * g as f64));
        let (_, j) = setup.evaluate(&x, None);
        for c in 0..x.len() {
            let h = 1e-6 * x[c].abs().max(1e-3);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let fd = (setup.evaluate(&xp, None).0 - setup.evaluate(&xm, None).0) / (2.0 * h);
            for i in 0..pts.len() {
                let a = j[(i, c)];
                assert!((fd[i] - a).abs() <= 1e-4 * a.abs().max(1e-3), "col {c} row {i}: {} vs {a}", fd[i]);
            }
        }
    }

    #[test]
    fn noiseless_recovery() {
        let pts = synthetic(2.973, 0.1, &[]);
        let fit = joint_fit_quadrupole(&pts, &JointFitOptions::default()).unwrap();
        assert!((fit.theta / 2.973 - 1.0).abs() < 1e-6, "{}", fit.theta);
        assert!((fit.beta0 - 0.1).abs() < 1e-6);
        assert!(fit.ci95_theta.0 < fit.theta && fit.theta < fit.ci95_theta.1);
        for o in &fit.per_angle_offsets {
            assert!(o.offset.abs() < 1e-6);
        }
    }

    #[test]
    fn offsets_paths_agree_on_noiseless_data() {
        let offs = [0.1, -0.05, 0.15, 0.0, -0.12, 0.07, 0.02];
        let pts = synthetic(2.973, 0.1, &offs);
        let free = joint_fit_quadrupole(&pts, &JointFitOptions::default()).unwrap();
        let sub = joint_fit_quadrupole(
            &pts,
            &JointFitOptions { offsets: OffsetHandling::SubtractIntercept, ..JointFitOptions::default() },
        )
        .unwrap();
        assert!((free.theta - 2.973).abs() < 1e-6 * 2.973);
        assert!((sub.theta - free.theta).abs() < 1e-6 * 2.973);
        for (o, t) in free.per_angle_offsets.iter().zip(offs) {
            assert!((o.offset - t).abs() < 1e-6);
        }
        let staged = two_stage_fit(&pts, &JointFitOptions::default()).unwrap();
        assert!((staged.theta - free.theta).abs() < 1e-6 * 2.973);
    }

    #[test]
    fn single_angle_is_not_identifiable() {
        let magic = (1.0f64 / 3.0).sqrt().acos();
        let pts: Vec<PhasePoint> = [0.5e8, 1e8, 1.5e8]
            .iter()
            .map(|&g| PhasePoint { beta_nominal: magic, dez_dz: g, tau_total: 4e-3, phase: 0.0, sigma: 0.03 })
            .collect();
        assert!(matches!(joint_fit_quadrupole(&pts, &JointFitOptions::default()), Err(Error::NonIdentifiable(_))));
    }
}
