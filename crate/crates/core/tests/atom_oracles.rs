use std::f64::consts::PI;

use ddquad::atom::{
    angular_factor, arm_phase_rate, gradient_from_trap_frequency, quadrupole_shift, second_order_differential,
    second_order_zeeman_shift, trap_frequency_from_gradient, FieldConfig, IonSpecies, TrapConfig,
};
use ddquad::spin::HalfInt;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 6.626_070_15e-34;
const E: f64 = 1.602_176_634e-19;
const A0: f64 = 5.291_772_109_03e-11;

/// Field-direction projection of the DC potential curvature
/// U = g/4·[(x²+y²−2z²) + ε(x²−y²)], rescaled to −2/g·nᵀ∇∇U·n.
fn tensor_projection(beta: f64, eps: f64, alpha: f64) -> f64 {
    let g = 1.0;
    let hessian = [[(1.0 + eps) * g / 2.0, 0.0, 0.0], [0.0, (1.0 - eps) * g / 2.0, 0.0], [0.0, 0.0, -g]];
    let n = [beta.sin() * alpha.cos(), beta.sin() * alpha.sin(), beta.cos()];
    let mut q = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            q += n[i] * hessian[i][j] * n[j];
        }
    }
    -2.0 * q / g
}

/// Textbook first-order quadrupole shift of |J, m⟩ in Hz for a field
/// gradient along the quantization axis, times the orientation factor.
fn shift_oracle(twice_j: i32, twice_m: i32, grad: f64, theta: f64, geometry: f64) -> f64 {
    let j = twice_j as f64 / 2.0;
    let m = twice_m as f64 / 2.0;
    0.25 * grad * theta * E * A0 * A0 * (j * (j + 1.0) - 3.0 * m * m) / (j * (2.0 * j - 1.0)) * geometry / H
}

proptest! {
    #[test]
    fn angular_factor_is_the_tensor_projection(
        beta in 0.0..PI,
        eps in -1.0f64..1.0,
        alpha in 0.0..(2.0 * PI),
    ) {
        let g = angular_factor(beta, eps, alpha);
        prop_assert!((g - tensor_projection(beta, eps, alpha)).abs() < 1e-12);
    }

    #[test]
    fn shifts_match_textbook_formula(
        grad in 1e6f64..1e9,
        theta in 0.1f64..5.0,
        beta in 0.0..PI,
        eps in -0.5f64..0.5,
        alpha in 0.0..PI,
    ) {
        let trap = TrapConfig { dez_dz: grad, epsilon1: eps, alpha, ..TrapConfig::default() };
        let geometry = tensor_projection(beta, eps, alpha);
        for twice_m in [-5, -3, -1, 1, 3, 5] {
            let got = quadrupole_shift(HalfInt::from_twice(twice_m), &trap, theta, beta).unwrap();
            let want = shift_oracle(5, twice_m, grad, theta, geometry);
            prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-300), "m={}/2: {} vs {}", twice_m, got, want);
        }
    }
}

#[test]
fn arm_rate_is_the_differential_shift() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let trap = TrapConfig {
            dez_dz: rng.random_range(1e6..1e9),
            epsilon1: rng.random_range(-0.5..0.5),
            alpha: rng.random_range(0.0..PI),
            ..TrapConfig::default()
        };
        let theta = rng.random_range(0.1..5.0);
        let beta = rng.random_range(0.0..PI);
        let shift = |tm| quadrupole_shift(HalfInt::from_twice(tm), &trap, theta, beta).unwrap();
        let want = 2.0 * PI * (shift(1) - shift(5));
        let got = arm_phase_rate(&trap, theta, beta);
        let rel = (got - want).abs() / want.abs();
        if want.abs() > 1e-6 {
            worst = worst.max(rel);
        }
    }
    println!("largest relative deviation over 1000 draws: {worst:.2e}, {:?}", started.elapsed());
    assert!(worst <= 1e-10);
}

#[test]
fn shifts_vanish_at_the_magic_angle() {
    let magic = (1.0f64 / 3.0).sqrt().acos();
    let trap = TrapConfig::default();
    assert!(angular_factor(magic, 0.0, 0.7).abs() < 1e-15);
    assert!(arm_phase_rate(&trap, 2.973, magic).abs() < 1e-9);
}

#[test]
fn second_order_zeeman_bias_at_scenario_field() {
    let species = IonSpecies::default();
    let field = FieldConfig { b: 3e-4, ..FieldConfig::default() };
    let bias = second_order_differential(&field, &species);
    assert!((bias - 3.1e6 * 9e-8).abs() < 1e-12, "{bias}");
    assert!((bias - 0.279).abs() < 1e-9);
    assert!(bias < 0.5);

    let nu = |tm| second_order_zeeman_shift(HalfInt::from_twice(tm), field.b, &species).unwrap();
    assert!((nu(1) - nu(5) - bias).abs() < 1e-12);
    assert!((nu(-1) - nu(-5) - bias).abs() < 1e-12);
    let trace: f64 = [-5, -3, -1, 1, 3, 5].into_iter().map(nu).sum();
    assert!(trace.abs() < 1e-12);
}

#[test]
fn trap_frequency_calibration_round_trips() {
    let species = IonSpecies::default();
    let mass = 87.905_612 * 1.660_539_066_60e-27;
    let omega = 2.0 * PI * 1.0e6;
    let g = gradient_from_trap_frequency(omega, &species, 0.0).unwrap();
    assert!((g - mass * omega * omega / E).abs() < 1e-6 * g);
    assert!((trap_frequency_from_gradient(g, &species) - omega).abs() < 1e-9 * omega);
    let corrected = gradient_from_trap_frequency(omega, &species, 0.005).unwrap();
    assert!((corrected / g - 0.995).abs() < 1e-12);
    assert!(gradient_from_trap_frequency(omega, &species, 0.02).is_err());
}

#[test]
fn non_d_sublevels_are_rejected() {
    let trap = TrapConfig::default();
    assert!(quadrupole_shift(HalfInt::from_twice(7), &trap, 1.0, 0.0).is_err());
    assert!(quadrupole_shift(HalfInt::from_twice(2), &trap, 1.0, 0.0).is_err());
}
