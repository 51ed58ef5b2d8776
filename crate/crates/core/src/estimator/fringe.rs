//! Binomial maximum-likelihood fit of a single Ramsey fringe.
//!
//! The model is p(φ) = o + h·cos(φ − ψ) with h = C/2. For fixed ψ the
//! log-likelihood is concave in (o, h) over the triangle 0 ≤ h ≤ min(o, 1 − o),
//! so the inner problem has a unique maximum found by Newton iteration or, when
//! it lies on the boundary, by bisection along the active edge. The phase is
//! then located by a coarse scan followed by root finding on the envelope
//! derivative.

use std::f64::consts::{PI, TAU};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::constants::CHI2_1DOF_95;
use crate::error::{Error, Result};
use crate::sampler::{FringeDataset, FringePoint};

const GRID: usize = 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    /// ψ in (−π, π].
    pub phase: f64,
    pub contrast: f64,
    pub offset: f64,
    pub neg_log_likelihood: f64,
    /// Inverse expected Fisher information in (phase, contrast, offset).
    pub cov: [[f64; 3]; 3],
    /// Profile-likelihood interval; `lo ≤ phase ≤ hi`, not wrapped.
    pub ci95_phase: (f64, f64),
}

impl FringeFit {
    /// Gaussian-equivalent phase error from the interval half-width.
    pub fn phase_sigma(&self) -> f64 {
        (self.ci95_phase.1 - self.ci95_phase.0) / (2.0 * crate::constants::Z_95)
    }
}

/// Wraps to (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

struct Obs {
    phi: f64,
    n: f64,
    k: f64,
}

/// One point's angle x = φ − ψ in the forms the model needs.
#[derive(Debug, Clone, Copy)]
struct Angle {
    cos: f64,
    /// cos²(x/2)
    c2: f64,
    /// sin²(x/2)
    s2: f64,
}

impl Angle {
    fn new(x: f64) -> Self {
        let (s, c) = (x / 2.0).sin_cos();
        Angle { cos: x.cos(), c2: c * c, s2: s * s }
    }

    /// (p, 1 − p) for p = o + h·cos x, written as distances from the two
    /// edges of the feasible triangle so neither cancels near 0 or 1.
    fn probs(self, o: f64, h: f64) -> (f64, f64) {
        self.probs_from_gaps(o - h, 1.0 - o - h, h)
    }

    fn probs_from_gaps(self, low_gap: f64, high_gap: f64, h: f64) -> (f64, f64) {
        (low_gap + 2.0 * h * self.c2, high_gap + 2.0 * h * self.s2)
    }
}

/// Binomial log-likelihood of k dark counts in n shots, with q = 1 − p.
fn term(k: f64, n: f64, p: f64, q: f64) -> f64 {
    let mut l = 0.0;
    if k > 0.0 {
        l += k * p.ln();
    }
    if n - k > 0.0 {
        l += (n - k) * q.ln();
    }
    l
}

/// ∂/∂p of one binomial log-likelihood term.
fn score(k: f64, n: f64, p: f64, q: f64) -> f64 {
    let mut s = 0.0;
    if k > 0.0 {
        s += k / p;
    }
    if n - k > 0.0 {
        s -= (n - k) / q;
    }
    s
}

struct Problem {
    obs: Vec<Obs>,
    total_k: f64,
    total_n: f64,
}

#[derive(Debug, Clone, Copy)]
struct Inner {
    o: f64,
    h: f64,
    loglik: f64,
}

impl Problem {
    /// Maximizes along one contrast-limited edge of the feasible triangle,
    /// h = o (`upper == false`) or h = 1 − o, parametrized by h = t/2.
    fn edge(&self, upper: bool, angles: &[Angle]) -> Inner {
        let at = |t: f64| -> (f64, f64, f64, f64) {
            let h = 0.5 * t;
            let (o, low_gap, high_gap) = if upper { (1.0 - h, 1.0 - t, 0.0) } else { (h, 0.0, 1.0 - t) };
            (o, h, low_gap, high_gap)
        };
        let deriv = |t: f64| -> f64 {
            let (_, h, low_gap, high_gap) = at(t);
            self.obs
                .iter()
                .zip(angles)
                .map(|(x, a)| {
                    let slope = if upper { a.cos - 1.0 } else { a.cos + 1.0 };
                    if slope == 0.0 {
                        0.0
                    } else {
                        let (p, q) = a.probs_from_gaps(low_gap, high_gap, h);
                        slope * score(x.k, x.n, p, q)
                    }
                })
                .sum()
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if deriv(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (o, h, low_gap, high_gap) = at(0.5 * (lo + hi));
        let loglik = self
            .obs
            .iter()
            .zip(angles)
            .map(|(x, a)| {
                let (p, q) = a.probs_from_gaps(low_gap, high_gap, h);
                term(x.k, x.n, p, q)
            })
            .sum();
        Inner { o, h, loglik }
    }

    fn interior(&self, angles: &[Angle]) -> Option<Inner> {
        let mut o = self.total_k / self.total_n;
        // least-squares amplitude as the starting point
        let (num, den) = self
            .obs
            .iter()
            .zip(angles)
            .fold((0.0, 0.0), |(a, b), (x, g)| (a + (x.k / x.n - o) * g.cos, b + g.cos * g.cos));
        let mut h = if den > 0.0 { (num / den).clamp(0.0, o.min(1.0 - o)) * 0.9 } else { 0.0 };
        if h <= 0.0 {
            h = 1e-3 * o.min(1.0 - o);
        }
        let feasible = |o: f64, h: f64| h > 0.0 && h < o && h < 1.0 - o;
        if !feasible(o, h) {
            return None;
        }
        let eval = |o: f64, h: f64| -> f64 {
            self.obs
                .iter()
                .zip(angles)
                .map(|(x, a)| {
                    let (p, q) = a.probs(o, h);
                    term(x.k, x.n, p, q)
                })
                .sum()
        };
        let mut l = eval(o, h);
        let mut last_step = f64::INFINITY;
        for _ in 0..100 {
            let (mut go, mut gh, mut hoo, mut hoh, mut hhh) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (x, a) in self.obs.iter().zip(angles) {
                let (p, q) = a.probs(o, h);
                let c = a.cos;
                let w = score(x.k, x.n, p, q);
                let v = x.k / (p * p) + (x.n - x.k) / (q * q);
                go += w;
                gh += w * c;
                hoo += v;
                hoh += v * c;
                hhh += v * c * c;
            }
            let det = hoo * hhh - hoh * hoh;
            if !(det > 0.0) {
                return None;
            }
            // Newton step for maximization: δ = (−H)⁻¹ g with −H = [[hoo, hoh], [hoh, hhh]]
            let d_o = (hhh * go - hoh * gh) / det;
            let d_h = (hoo * gh - hoh * go) / det;
            last_step = d_o.abs() + d_h.abs();
            if last_step < 1e-14 {
                return Some(Inner { o, h, loglik: l });
            }
            // near the optimum the gain falls below the rounding of the
            // log-likelihood, so full steps are taken without a line search
            if last_step < 1e-7 && feasible(o + d_o, h + d_h) {
                o += d_o;
                h += d_h;
                l = eval(o, h);
                continue;
            }
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let (no, nh) = (o + step * d_o, h + step * d_h);
                if no == o && nh == h {
                    break;
                }
                if feasible(no, nh) {
                    let nl = eval(no, nh);
                    if nl >= l {
                        o = no;
                        h = nh;
                        l = nl;
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        (last_step < 1e-10).then_some(Inner { o, h, loglik: l })
    }

    fn profile(&self, psi: f64) -> Inner {
        let angles: Vec<Angle> = self.obs.iter().map(|x| Angle::new(x.phi - psi)).collect();
        let interior = self.interior(&angles);
        if let Some(inner) = interior {
            if inner.h < inner.o.min(1.0 - inner.o) - 1e-6 {
                return inner;
            }
        }
        let flat = {
            let o = self.total_k / self.total_n;
            Inner { o, h: 0.0, loglik: self.obs.iter().map(|x| term(x.k, x.n, o, 1.0 - o)).sum() }
        };
        let lower = self.edge(false, &angles);
        let upper = self.edge(true, &angles);
        [lower, upper].into_iter().chain(interior).fold(flat, |best, c| if c.loglik > best.loglik { c } else { best })
    }

    /// d/dψ of the profile log-likelihood.
    fn envelope(&self, psi: f64) -> (f64, Inner) {
        let inner = self.profile(psi);
        let d = self
            .obs
            .iter()
            .map(|x| {
                let slope = inner.h * (x.phi - psi).sin();
                if slope == 0.0 {
                    0.0
                } else {
                    let (p, q) = Angle::new(x.phi - psi).probs(inner.o, inner.h);
                    slope * score(x.k, x.n, p, q)
                }
            })
            .sum();
        (d, inner)
    }
}

fn build_problem(points: &[FringePoint]) -> Result<Problem> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.phi_laser.rem_euclid(TAU)).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Dataset("fringe fit needs at least 3 distinct phases".into()));
    }
    for p in points {
        if p.n_shots == 0 || !(0.0..=p.n_shots as f64).contains(&p.k_d) || !p.phi_laser.is_finite() {
            return Err(Error::Dataset(format!("invalid fringe point {p:?}")));
        }
    }
    let first = points[0].k_d / points[0].n_shots as f64;
    if points.iter().all(|p| p.k_d / p.n_shots as f64 == first) {
        return Err(Error::DegenerateData(format!("all points have k/n = {first}; contrast is not identifiable")));
    }
    let obs: Vec<Obs> = points.iter().map(|p| Obs { phi: p.phi_laser, n: p.n_shots as f64, k: p.k_d }).collect();
    let total_k = obs.iter().map(|o| o.k).sum();
    let total_n = obs.iter().map(|o| o.n).sum();
    Ok(Problem { obs, total_k, total_n })
}

/// Finds ψ in [a, b] where the envelope derivative changes sign from + to −.
fn locate_root(prob: &Problem, mut a: f64, mut b: f64, mut fa: f64) -> (f64, Inner) {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b || b - a < 1e-15 {
            break;
        }
        let (fm, _) = prob.envelope(mid);
        if (fm > 0.0) == (fa > 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    let psi = 0.5 * (a + b);
    (psi, prob.profile(psi))
}

fn maximize(prob: &Problem) -> Result<(f64, Inner)> {
    let grid: Vec<(f64, f64, Inner)> = (0..GRID)
        .map(|i| {
            let psi = -PI + TAU * i as f64 / GRID as f64;
            let (d, inner) = prob.envelope(psi);
            (psi, d, inner)
        })
        .collect();
    let best = (0..GRID).max_by(|&a, &b| grid[a].2.loglik.total_cmp(&grid[b].2.loglik)).unwrap();
    let step = TAU / GRID as f64;
    let (psi0, d0, _) = grid[best];
    let mut candidates = Vec::new();
    if d0 > 0.0 {
        let (psi1, d1) = (psi0 + step, grid[(best + 1) % GRID].1);
        if d1 <= 0.0 {
            candidates.push(locate_root(prob, psi0, psi1, d0));
        }
    } else {
        let (psim, dm) = (psi0 - step, grid[(best + GRID - 1) % GRID].1);
        if dm > 0.0 {
            candidates.push(locate_root(prob, psim, psi0, dm));
        }
    }
    if d0 == 0.0 {
        candidates.push((psi0, grid[best].2));
    }
    candidates.into_iter().max_by(|a, b| a.1.loglik.total_cmp(&b.1.loglik)).ok_or_else(|| Error::NonConvergence {
        iterations: GRID,
        message: "no stationary phase bracketed next to the best grid point".into(),
    })
}

/// First ψ beyond `psi_hat` in direction `dir` where 2·ΔlnL reaches the
/// 95 % threshold, or `psi_hat ± π` if it never does.
fn profile_bound(prob: &Problem, psi_hat: f64, l_max: f64, dir: f64, sigma_guess: f64) -> f64 {
    let excess = |psi: f64| 2.0 * (l_max - prob.profile(psi).loglik) - CHI2_1DOF_95;
    let mut inner = 0.0;
    let mut outer = sigma_guess.clamp(1e-9, PI / 4.0);
    loop {
        if excess(psi_hat + dir * outer) >= 0.0 {
            break;
        }
        inner = outer;
        outer *= 2.0;
        if outer >= PI {
            if excess(psi_hat + dir * PI) < 0.0 {
                return psi_hat + dir * PI;
            }
            outer = PI;
            break;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (inner + outer);
        if outer - inner < 1e-13 * outer.max(1e-6) {
            break;
        }
        if excess(psi_hat + dir * mid) >= 0.0 {
            outer = mid;
        } else {
            inner = mid;
        }
    }
    psi_hat + dir * 0.5 * (inner + outer)
}

fn fisher_cov(prob: &Problem, psi: f64, o: f64, h: f64) -> [[f64; 3]; 3] {
    let mut info = Matrix3::<f64>::zeros();
    for x in &prob.obs {
        let (s, c) = (x.phi - psi).sin_cos();
        let p = (o + h * c).clamp(1e-12, 1.0 - 1e-12);
        let grad = nalgebra::Vector3::new(h * s, c / 2.0, 1.0);
        info += grad * grad.transpose() * (x.n / (p * (1.0 - p)));
    }
    let inv = info.try_inverse().unwrap_or_else(|| Matrix3::from_element(f64::NAN));
    std::array::from_fn(|r| std::array::from_fn(|c| inv[(r, c)]))
}

/// Fits a fringe given as raw points.
pub fn fit_fringe_points(points: &[FringePoint]) -> Result<FringeFit> {
    let prob = build_problem(points)?;
    let (psi, inner) = maximize(&prob)?;
    if !(inner.h > 0.0) {
        return Err(Error::DegenerateData("best fit has zero contrast".into()));
    }
    let cov = fisher_cov(&prob, psi, inner.o, inner.h);
    let sigma_guess = if cov[0][0].is_finite() && cov[0][0] > 0.0 { cov[0][0].sqrt() } else { 0.1 };
    let lo = profile_bound(&prob, psi, inner.loglik, -1.0, sigma_guess * 1.96);
    let hi = profile_bound(&prob, psi, inner.loglik, 1.0, sigma_guess * 1.96);
    let phase = wrap_phase(psi);
    let shift = phase - psi;
    Ok(FringeFit {
        phase,
        contrast: 2.0 * inner.h,
        offset: inner.o,
        neg_log_likelihood: -inner.loglik,
        cov,
        ci95_phase: (lo + shift, hi + shift),
    })
}

/// Fits a fringe dataset.
pub fn fit_fringe_mle(data: &FringeDataset) -> Result<FringeFit> {
    fit_fringe_points(&data.points)
}

/// Fits phase, contrast and offset only, skipping the interval search.
pub fn fit_fringe_phase(points: &[FringePoint]) -> Result<(f64, f64, f64)> {
    let prob = build_problem(points)?;
    let (psi, inner) = maximize(&prob)?;
    Ok((wrap_phase(psi), 2.0 * inner.h, inner.o))
}

/// Negative log-likelihood of given parameters (up to the binomial constant).
pub fn fringe_neg_log_likelihood(points: &[FringePoint], phase: f64, contrast: f64, offset: f64) -> f64 {
    points
        .iter()
        .map(|p| {
            let (prob, q) = Angle::new(p.phi_laser - phase).probs(offset, contrast / 2.0);
            -term(p.k_d, p.n_shots as f64, prob, q)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact(phase: f64, contrast: f64, offset: f64, n: u32, points: usize) -> Vec<FringePoint> {
        (0..points)
            .map(|i| {
                let phi = TAU * i as f64 / points as f64;
                let p = offset + contrast / 2.0 * (phi - phase).cos();
                FringePoint { phi_laser: phi, n_shots: n, k_d: n as f64 * p }
            })
            .collect()
    }

    #[test]
    fn noiseless_full_contrast() {
        for &truth in &[1.0, -2.5, 3.0, 0.0, PI] {
            let fit = fit_fringe_points(&exact(truth, 1.0, 0.5, 300, 12)).unwrap();
            assert!(wrap_phase(fit.phase - truth).abs() < 1e-9, "{truth} {}", fit.phase);
            assert!((fit.contrast - 1.0).abs() < 1e-9);
            assert!(fit.ci95_phase.0 <= fit.phase && fit.phase <= fit.ci95_phase.1);
        }
    }

    #[test]
    fn noiseless_partial_contrast() {
        let fit = fit_fringe_points(&exact(-1.2, 0.7, 0.45, 300, 12)).unwrap();
        assert!((fit.phase + 1.2).abs() < 1e-9);
        assert!((fit.contrast - 0.7).abs() < 1e-8);
        assert!((fit.offset - 0.45).abs() < 1e-9);
    }

    #[test]
    fn flat_data_is_degenerate() {
        let pts: Vec<FringePoint> =
            (0..12).map(|i| FringePoint { phi_laser: i as f64 * 0.5, n_shots: 300, k_d: 150.0 }).collect();
        assert!(matches!(fit_fringe_points(&pts), Err(Error::DegenerateData(_))));
        let zeros: Vec<FringePoint> =
            (0..12).map(|i| FringePoint { phi_laser: i as f64 * 0.5, n_shots: 300, k_d: 0.0 }).collect();
        assert!(matches!(fit_fringe_points(&zeros), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn too_few_phases() {
        let pts = vec![
            FringePoint { phi_laser: 0.0, n_shots: 10, k_d: 3.0 },
            FringePoint { phi_laser: 1.0, n_shots: 10, k_d: 7.0 },
        ];
        assert!(fit_fringe_points(&pts).is_err());
    }

    #[test]
    fn wrap() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }
}
