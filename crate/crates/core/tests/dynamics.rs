mod common;

use std::f64::consts::{FRAC_PI_4, PI};

use common::{phase_total, wigner_small_d};
use ddquad::atom::{second_order_differential, IonModel};
use ddquad::estimator::wrap_phase;
use ddquad::noise::FieldTrajectory;
use ddquad::scenario::{area_grid, field_for_zeeman_hz, rabi_scan};
use ddquad::sequence::{
    analytic_phase, build_quadrupole_dd_sequence, free_evolve, Param, PulseSequence, SequenceElement,
};
use ddquad::state::{Level, StateVector};

fn model(beta: f64, z2: bool) -> IonModel {
    let mut m = IonModel { second_order_zeeman: z2, ..IonModel::default() };
    m.trap.dez_dz = 1e8;
    m.field.beta = beta;
    m
}

fn dd(n: usize) -> impl Fn(f64) -> PulseSequence {
    move |tau| build_quadrupole_dd_sequence(n, tau, 0.0).unwrap()
}

fn dd_with_area_error(n: usize, rel: f64) -> impl Fn(f64) -> PulseSequence {
    move |tau| {
        let mut s = build_quadrupole_dd_sequence(n, tau, 0.0).unwrap();
        for e in &mut s.elements {
            if let SequenceElement::RfPulse { area, .. } = e {
                *area = Param::Value(PI * (1.0 + rel));
            }
        }
        s
    }
}

#[test]
fn echo_phase_matches_twice_n_tau_arm_rate() {
    let mut worst: f64 = 0.0;
    for n in [2, 4, 8, 16] {
        for tau in [50e-6, 250e-6] {
            for beta in [0.0, FRAC_PI_4, 1.0] {
                let m = model(beta, false);
                let sim = phase_total(dd(n), tau, &m, &FieldTrajectory::zero());
                let err = wrap_phase(sim - analytic_phase(n, tau, &m)).abs();
                assert!(err <= 1e-9, "n={n} τ={tau} β={beta}: |Δ| = {err:e}");
                worst = worst.max(err);
            }
        }
    }
    println!("largest deviation from 2nτ·rate: {worst:.2e} rad");
}

#[test]
fn second_order_zeeman_adds_its_differential_phase() {
    let (n, tau) = (8, 250e-6);
    let m = model(FRAC_PI_4, true);
    let c2b2 = second_order_differential(&m.field, &m.species);
    assert!((c2b2 - 0.279).abs() < 1e-3, "{c2b2}");
    let expected = analytic_phase(n, tau, &m) + 2.0 * PI * c2b2 * 2.0 * n as f64 * tau;
    let sim = phase_total(dd(n), tau, &m, &FieldTrajectory::zero());
    assert!(wrap_phase(sim - expected).abs() <= 1e-9, "{sim} vs {expected}");
}

#[test]
fn static_field_offset_is_echoed_away() {
    let m = model(FRAC_PI_4, false);
    let offset = FieldTrajectory::constant(field_for_zeeman_hz(5e3, &m.species));
    for n in [2, 4, 8, 16] {
        let tau = 4e-3 / (2 * n) as f64;
        let quiet = phase_total(dd(n), tau, &m, &FieldTrajectory::zero());
        let shifted = phase_total(dd(n), tau, &m, &offset);
        assert!(wrap_phase(shifted - quiet).abs() <= 1e-9, "n={n}: {:e}", shifted - quiet);
    }
}

#[test]
fn static_offset_only_moves_the_second_order_term() {
    let m = model(FRAC_PI_4, true);
    let delta = field_for_zeeman_hz(5e3, &m.species);
    let c2 = second_order_differential(&m.field, &m.species) / (m.field.b * m.field.b);
    let (n, tau) = (8, 250e-6);
    let expected = 2.0 * PI * c2 * ((m.field.b + delta).powi(2) - m.field.b.powi(2)) * 2.0 * n as f64 * tau;
    let quiet = phase_total(dd(n), tau, &m, &FieldTrajectory::zero());
    let shifted = phase_total(dd(n), tau, &m, &FieldTrajectory::constant(delta));
    assert!((wrap_phase(shifted - quiet) - expected).abs() <= 1e-9, "{} vs {expected}", shifted - quiet);
}

/// Unwrapped phase of the −5/2 and −1/2 coherence after free precession,
/// integrated in short steps.
fn ramsey_phase(total: f64, m: &IonModel, traj: &FieldTrajectory) -> f64 {
    let (a, b) = (Level::d(-5).unwrap(), Level::d(-1).unwrap());
    let steps = 400;
    let dt = total / steps as f64;
    let mut state = StateVector::probe_superposition();
    let mut phase = 0.0;
    for k in 0..steps {
        let before = state.relative_phase(a, b);
        state = free_evolve(&state, k as f64 * dt, dt, m, traj).unwrap();
        phase += wrap_phase(state.relative_phase(a, b) - before);
    }
    phase
}

#[test]
fn linear_drift_is_suppressed_relative_to_ramsey() {
    let m = model(FRAC_PI_4, true);
    let total = 4e-3;
    let drift = FieldTrajectory::linear(0.0, field_for_zeeman_hz(2e3, &m.species) / total);
    let ramsey = (ramsey_phase(total, &m, &drift) - ramsey_phase(total, &m, &FieldTrajectory::zero())).abs();
    let expected_ramsey = 2.0 * PI * 2.0 * 2e3 * total / 2.0;
    assert!((ramsey - expected_ramsey).abs() < 1e-6 * expected_ramsey, "{ramsey} vs {expected_ramsey}");

    let (n, tau) = (8, total / 16.0);
    let echo =
        wrap_phase(phase_total(dd(n), tau, &m, &drift) - phase_total(dd(n), tau, &m, &FieldTrajectory::zero())).abs();
    let suppression = ramsey / echo.max(f64::MIN_POSITIVE);
    println!("ramsey drift phase {ramsey:.4} rad, echo residual {echo:.2e} rad, suppression {suppression:.2e}");
    assert!(suppression >= 100.0);
}

fn c(re: f64, im: f64) -> (f64, f64) {
    (re, im)
}

/// i^k for integer k.
fn i_pow(k: i64) -> (f64, f64) {
    match k.rem_euclid(4) {
        0 => c(1.0, 0.0),
        1 => c(0.0, 1.0),
        2 => c(-1.0, 0.0),
        _ => c(0.0, -1.0),
    }
}

#[test]
fn rabi_populations_match_wigner_d() {
    let areas = area_grid(121, 4.0 * PI);
    let rows = rabi_scan(&areas, 0.0).unwrap();
    let mut worst: f64 = 0.0;
    for row in &rows {
        for (k, &p) in row.populations.iter().enumerate() {
            let tmp = 2 * k as i64 - 5;
            let expected = match row.initial.as_str() {
                "m-5/2" => wigner_small_d(5, tmp, -5, row.area).powi(2),
                "psi_i" => {
                    let (mut re, mut im) = (0.0, 0.0);
                    for tm in [-5i64, -1] {
                        let d = wigner_small_d(5, tmp, tm, row.area) / 2f64.sqrt();
                        let (pr, pi) = i_pow((tmp - tm) / 2);
                        re += pr * d;
                        im += pi * d;
                    }
                    re * re + im * im
                }
                other => panic!("unexpected initial state {other}"),
            };
            let err = (p - expected).abs();
            assert!(err <= 1e-10, "{} area {}: P[{k}] = {p} vs {expected}", row.initial, row.area);
            worst = worst.max(err);
        }
    }
    println!("largest Rabi population error: {worst:.2e}");
}

#[test]
fn rabi_from_stretched_state_ignores_rf_phase() {
    let areas = area_grid(25, 2.0 * PI);
    let a = rabi_scan(&areas, 0.0).unwrap();
    let b = rabi_scan(&areas, 1.234).unwrap();
    for (x, y) in a.iter().zip(&b).filter(|(x, _)| x.initial == "m-5/2") {
        for (p, q) in x.populations.iter().zip(&y.populations) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn pulse_area_error_bias_is_quadratic() {
    let z = FieldTrajectory::zero();
    for (n, beta) in [(8, 1.0), (2, 0.3)] {
        let m = model(beta, false);
        let tau = 4e-3 / (2 * n) as f64;
        let ideal = phase_total(dd(n), tau, &m, &z);
        let bias = |rel: f64| wrap_phase(phase_total(dd_with_area_error(n, rel), tau, &m, &z) - ideal);
        let (b1, b_half) = (bias(0.01), bias(0.005));
        let ratio = b1 / b_half;
        println!("n={n} β={beta}: bias(1%) = {b1:.3e} rad, bias(0.5%) = {b_half:.3e} rad, ratio {ratio:.3}");
        assert!((ratio - 4.0).abs() <= 0.4, "ratio {ratio}");
    }
}
