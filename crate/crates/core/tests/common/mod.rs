#![allow(dead_code)]

use ddquad::atom::IonModel;
use ddquad::estimator::{fit_fringe_points, wrap_phase};
use ddquad::noise::FieldTrajectory;
use ddquad::sampler::{default_phi_grid, measure_population_d, DetectionModel, FringePoint};
use ddquad::sequence::{optical_ground, run_sequence, Param, PulseSequence, SequenceElement};
use ddquad::state::StateVector;

/// Sets the laser phase of the final optical pulse.
pub fn with_laser_phase(seq: &PulseSequence, phi: f64) -> PulseSequence {
    let mut s = seq.clone();
    let last =
        s.elements.iter().rposition(|e| matches!(e, SequenceElement::OpticalPulse { .. })).expect("an optical pulse");
    if let SequenceElement::OpticalPulse { laser_phase, .. } = &mut s.elements[last] {
        *laser_phase = Param::Value(phi);
    }
    s
}

/// Noise-free fringe of `seq` with expected counts, fitted by maximum likelihood.
pub fn fringe_phase(seq: &PulseSequence, model: &IonModel, traj: &FieldTrajectory) -> f64 {
    let points: Vec<FringePoint> = default_phi_grid(12)
        .into_iter()
        .map(|phi| {
            let out =
                run_sequence(&StateVector::basis(optical_ground()), &with_laser_phase(seq, phi), model, traj).unwrap();
            let p = measure_population_d(&out, &DetectionModel::default());
            FringePoint { phi_laser: phi, n_shots: 300, k_d: 300.0 * p }
        })
        .collect();
    fit_fringe_points(&points).unwrap().phase
}

/// φ_total of `build(tau)` against `build(0)`.
pub fn phase_total(build: impl Fn(f64) -> PulseSequence, tau: f64, model: &IonModel, traj: &FieldTrajectory) -> f64 {
    wrap_phase(fringe_phase(&build(tau), model, traj) - fringe_phase(&build(0.0), model, traj))
}

pub fn factorial(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Textbook Wigner small-d element ⟨j m'| e^{-iθJy} |j m⟩, with j, m', m
/// given as twice their values.
pub fn wigner_small_d(tj: i64, tmp: i64, tm: i64, theta: f64) -> f64 {
    let dm = (tmp - tm) / 2;
    let (jpm, jmm, jpmp, jmmp) = ((tj + tm) / 2, (tj - tm) / 2, (tj + tmp) / 2, (tj - tmp) / 2);
    let pref = (factorial(jpm) * factorial(jmm) * factorial(jpmp) * factorial(jmmp)).sqrt();
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    (0..=tj)
        .filter(|&k| jpm - k >= 0 && jmmp - k >= 0 && k + dm >= 0)
        .map(|k| {
            let sign = if (k + dm) % 2 == 0 { 1.0 } else { -1.0 };
            sign / (factorial(jpm - k) * factorial(k) * factorial(jmmp - k) * factorial(k + dm))
                * c.powi((tj - dm - 2 * k) as i32)
                * s.powi((2 * k + dm) as i32)
        })
        .sum::<f64>()
        * pref
}
