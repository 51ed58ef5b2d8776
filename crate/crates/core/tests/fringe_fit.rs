use std::f64::consts::PI;

use ddquad::estimator::{fit_fringe_phase, fit_fringe_points, fringe_neg_log_likelihood, wrap_phase};
use ddquad::sampler::{default_phi_grid, substream_seed, FringePoint};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

fn prob(phi: f64, phase: f64, contrast: f64, offset: f64) -> f64 {
    offset + contrast / 2.0 * (phi - phase).cos()
}

fn sampled(phase: f64, contrast: f64, offset: f64, shots: u32, points: usize, seed: u64) -> Vec<FringePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    default_phi_grid(points)
        .into_iter()
        .map(|phi| {
            let p = prob(phi, phase, contrast, offset).clamp(0.0, 1.0);
            let k = Binomial::new(shots as u64, p).unwrap().sample(&mut rng);
            FringePoint { phi_laser: phi, n_shots: shots, k_d: k as f64 }
        })
        .collect()
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Phase variance bound from the binomial Fisher matrix in
/// (phase, contrast, offset): the (0,0) cofactor over the determinant.
fn cramer_rao_phase(phase: f64, contrast: f64, offset: f64, shots: u32, points: usize) -> f64 {
    let mut f = [[0.0; 3]; 3];
    for phi in default_phi_grid(points) {
        let p = prob(phi, phase, contrast, offset);
        let grad = [contrast / 2.0 * (phi - phase).sin(), (phi - phase).cos() / 2.0, 1.0];
        let w = shots as f64 / (p * (1.0 - p));
        for r in 0..3 {
            for c in 0..3 {
                f[r][c] += w * grad[r] * grad[c];
            }
        }
    }
    let minor = f[1][1] * f[2][2] - f[1][2] * f[2][1];
    minor / det3(&f)
}

#[test]
fn exact_counts_recover_parameters() {
    for (phase, contrast, offset) in [(0.3, 0.9, 0.5), (-2.9, 0.4, 0.35), (3.1, 1.0, 0.5)] {
        let pts: Vec<_> = default_phi_grid(12)
            .into_iter()
            .map(|phi| FringePoint { phi_laser: phi, n_shots: 300, k_d: 300.0 * prob(phi, phase, contrast, offset) })
            .collect();
        let fit = fit_fringe_points(&pts).unwrap();
        assert!(wrap_phase(fit.phase - phase).abs() < 1e-9, "{} vs {phase}", fit.phase);
        assert!((fit.contrast - contrast).abs() < 1e-7);
        assert!((fit.offset - offset).abs() < 1e-7);
        assert!(fit.ci95_phase.0 <= fit.phase && fit.phase <= fit.ci95_phase.1);
    }
}

#[test]
fn fit_is_a_likelihood_maximum() {
    let pts = sampled(1.1, 0.8, 0.5, 300, 12, 5);
    let fit = fit_fringe_points(&pts).unwrap();
    let best = fringe_neg_log_likelihood(&pts, fit.phase, fit.contrast, fit.offset);
    assert!((best - fit.neg_log_likelihood).abs() < 1e-9 * best.abs().max(1.0));
    for (dp, dc, doff) in
        [(1e-3, 0.0, 0.0), (-1e-3, 0.0, 0.0), (0.0, 1e-3, 0.0), (0.0, -1e-3, 0.0), (0.0, 0.0, 1e-3), (0.0, 0.0, -1e-3)]
    {
        let moved = fringe_neg_log_likelihood(&pts, fit.phase + dp, fit.contrast + dc, fit.offset + doff);
        assert!(moved >= best - 1e-9, "({dp}, {dc}, {doff}): {moved} < {best}");
    }
}

#[test]
fn profile_interval_contains_the_likelihood_threshold() {
    let pts = sampled(-0.7, 0.85, 0.5, 300, 12, 9);
    let fit = fit_fringe_points(&pts).unwrap();
    let profile = |psi: f64| {
        let mut best = f64::INFINITY;
        for ic in 0..=200 {
            for io in 0..=200 {
                let (c, o) = (ic as f64 / 200.0, 0.3 + 0.4 * io as f64 / 200.0);
                if c / 2.0 <= o.min(1.0 - o) {
                    best = best.min(fringe_neg_log_likelihood(&pts, psi, c, o));
                }
            }
        }
        best
    };
    let floor = profile(fit.phase);
    for edge in [fit.ci95_phase.0, fit.ci95_phase.1] {
        let rise = 2.0 * (profile(edge) - floor);
        assert!((rise - 3.8415).abs() < 0.15, "−2ΔlnL at {edge} = {rise}");
    }
}

#[test]
fn phase_rmse_is_near_the_cramer_rao_bound() {
    let (shots, points, reps, phase) = (300u32, 12usize, 200u64, 0.3);
    for contrast in [0.7, 1.0] {
        let sq: f64 = (0..reps)
            .map(|r| {
                let pts =
                    sampled(phase, contrast, 0.5, shots, points, substream_seed(77, &[(contrast * 10.0) as u64, r]));
                wrap_phase(fit_fringe_phase(&pts).unwrap().0 - phase).powi(2)
            })
            .sum();
        let rmse = (sq / reps as f64).sqrt();
        let crb = cramer_rao_phase(phase, contrast, 0.5, shots, points).sqrt();
        let small_contrast = (2.0 / ((shots as usize * points) as f64 * contrast * contrast)).sqrt();
        let ratio = rmse / crb;
        println!("C={contrast}: RMSE {rmse:.5} rad, CRB {crb:.5} rad, sqrt(2/(N C^2)) {small_contrast:.5} rad, ratio {ratio:.3}");
        assert!((ratio - 1.0).abs() <= 0.2, "ratio {ratio}");
    }
}

#[test]
fn reference_subtraction_ignores_a_common_laser_offset() {
    let sig = sampled(1.9, 0.8, 0.5, 300, 12, 1);
    let reference = sampled(0.2, 0.8, 0.5, 300, 12, 2);
    let total = |delta: f64| {
        let shift = |pts: &[FringePoint]| -> Vec<FringePoint> {
            pts.iter().map(|p| FringePoint { phi_laser: p.phi_laser + delta, ..*p }).collect()
        };
        let s = fit_fringe_phase(&shift(&sig)).unwrap().0;
        let r = fit_fringe_phase(&shift(&reference)).unwrap().0;
        wrap_phase(s - r)
    };
    let base = total(0.0);
    for delta in [0.1, -1.3, 2.5, PI] {
        assert!(wrap_phase(total(delta) - base).abs() <= 1e-9, "δ={delta}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn phase_is_equivariant_under_laser_shifts(
        phase in -PI..PI,
        contrast in 0.3f64..0.95,
        delta in -PI..PI,
        seed in 0u64..1000,
    ) {
        let pts = sampled(phase, contrast, 0.5, 300, 12, seed);
        let shifted: Vec<_> = pts.iter().map(|p| FringePoint { phi_laser: p.phi_laser + delta, ..*p }).collect();
        let a = fit_fringe_phase(&pts).unwrap().0;
        let b = fit_fringe_phase(&shifted).unwrap().0;
        prop_assert!(wrap_phase(b - a - delta).abs() < 1e-8, "{} {} {}", a, b, delta);
    }

    #[test]
    fn swapping_bright_and_dark_adds_pi(
        phase in -PI..PI,
        contrast in 0.3f64..0.95,
        seed in 0u64..1000,
    ) {
        let pts = sampled(phase, contrast, 0.5, 300, 12, seed);
        let flipped: Vec<_> = pts.iter().map(|p| FringePoint { k_d: p.n_shots as f64 - p.k_d, ..*p }).collect();
        let (a, ca, oa) = fit_fringe_phase(&pts).unwrap();
        let (b, cb, ob) = fit_fringe_phase(&flipped).unwrap();
        prop_assert!(wrap_phase(b - a - PI).abs() < 1e-8);
        prop_assert!((ca - cb).abs() < 1e-7);
        prop_assert!((oa + ob - 1.0).abs() < 1e-7);
    }
}
