//! Level shifts, gradient calibration and phase rates for the ⁸⁸Sr⁺ probe.
//!
//! Θ is carried in e·a₀² everywhere and converted to SI only inside the
//! shift formulas.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{
    ATOMIC_MASS_UNIT, BOHR_MAGNETON_HZ_PER_T, ELEMENTARY_CHARGE, E_A0_SQUARED, HBAR, PLANCK, SR88_MASS_U,
};
use crate::error::{Error, Result};
use crate::spin::HalfInt;

/// A published value of Θ(D,5/2) used in the comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceValue {
    pub label: String,
    pub kind: ReferenceKind,
    /// e·a₀²
    pub value: f64,
    /// One-sigma uncertainty, e·a₀². Zero when none was quoted.
    #[serde(default)]
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Measurement,
    Theory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IonSpecies {
    /// kg
    pub mass: f64,
    /// C
    pub charge: f64,
    pub g_ground: f64,
    pub g_d: f64,
    /// Differential second-order Zeeman coefficient of the probed
    /// superposition, Hz/T².
    pub c2_quad_zeeman: f64,
    pub reference_theta_values: Vec<ReferenceValue>,
}

impl Default for IonSpecies {
    fn default() -> Self {
        IonSpecies {
            mass: SR88_MASS_U * ATOMIC_MASS_UNIT,
            charge: ELEMENTARY_CHARGE,
            g_ground: 2.0,
            g_d: 1.2,
            c2_quad_zeeman: 3.1e6,
            reference_theta_values: default_references(),
        }
    }
}

/// Prior determinations of Θ(4D₅/₂) in ⁸⁸Sr⁺.
#[allow(clippy::approx_constant)]
pub fn default_references() -> Vec<ReferenceValue> {
    vec![
        ReferenceValue {
            label: "Barwood et al. 2004 (clock-transition measurement)".into(),
            kind: ReferenceKind::Measurement,
            value: 2.6,
            sigma: 0.3,
        },
        ReferenceValue {
            label: "Itano 2006 (Dirac-Hartree-Fock + core polarization)".into(),
            kind: ReferenceKind::Theory,
            value: 3.016,
            sigma: 0.0,
        },
        ReferenceValue {
            label: "Sur et al. 2006 (relativistic coupled cluster)".into(),
            kind: ReferenceKind::Theory,
            value: 3.14,
            sigma: 0.0,
        },
        ReferenceValue {
            label: "Jiang, Arora & Safronova 2008 (all-order)".into(),
            kind: ReferenceKind::Theory,
            value: 2.949,
            sigma: 0.015,
        },
    ]
}

impl IonSpecies {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.charge > 0.0) {
            return Err(Error::InvalidArgument("ion mass and charge must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapConfig {
    /// Axial DC field gradient dE_z/dz, V/m².
    pub dez_dz: f64,
    /// Radial asymmetry of the DC potential.
    pub epsilon1: f64,
    /// Azimuth of the quantization axis projection in the trap x–y plane,
    /// measured from the trap x axis, rad.
    pub alpha: f64,
    /// Axial secular frequency, rad/s.
    pub omega_z: Option<f64>,
    /// Fractional RF-field contribution to the axial confinement.
    pub rf_axial_correction: f64,
}

impl Default for TrapConfig {
    fn default() -> Self {
        TrapConfig { dez_dz: 1e8, epsilon1: 0.0, alpha: PI / 4.0, omega_z: None, rf_axial_correction: 0.0 }
    }
}

impl TrapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.epsilon1) {
            return Err(Error::InvalidArgument(format!("epsilon1 = {} outside [-1, 1]", self.epsilon1)));
        }
        if !(0.0..=0.01).contains(&self.rf_axial_correction) {
            return Err(Error::InvalidArgument(format!(
                "rf_axial_correction = {} outside [0, 0.01]",
                self.rf_axial_correction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    /// Magnetic field magnitude, T.
    pub b: f64,
    /// Physical angle between quantization axis and trap axis, rad.
    pub beta: f64,
    /// Offset between nominal and physical angle, rad.
    pub beta0: f64,
    /// Gaussian error of the per-angle calibration, rad.
    pub beta_calibration_sigma: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig { b: 3e-4, beta: PI / 4.0, beta0: 0.0, beta_calibration_sigma: 0.0 }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b >= 0.0) {
            return Err(Error::InvalidArgument(format!("field magnitude {} is negative", self.b)));
        }
        if !(self.beta_calibration_sigma >= 0.0) {
            return Err(Error::InvalidArgument("beta_calibration_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Everything the dynamics need to know about the ion and its environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonModel {
    pub species: IonSpecies,
    pub trap: TrapConfig,
    pub field: FieldConfig,
    /// True quadrupole moment, e·a₀².
    pub theta: f64,
    pub second_order_zeeman: bool,
    /// RF Rabi angular frequency Ω (rad/s) for finite-duration RF pulses.
    /// `None` keeps pulses instantaneous.
    pub rf_rabi_rate: Option<f64>,
}

impl Default for IonModel {
    fn default() -> Self {
        IonModel {
            species: IonSpecies::default(),
            trap: TrapConfig::default(),
            field: FieldConfig::default(),
            theta: 2.973,
            second_order_zeeman: true,
            rf_rabi_rate: None,
        }
    }
}

impl IonModel {
    pub fn validate(&self) -> Result<()> {
        self.species.validate()?;
        self.trap.validate()?;
        self.field.validate()?;
        if let Some(w) = self.rf_rabi_rate {
            if !(w > 0.0) {
                return Err(Error::InvalidArgument("rf_rabi_rate must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Adjacent-sublevel Zeeman splitting g·μ_B·B/h, Hz.
pub fn zeeman_splitting(field: &FieldConfig, g: f64) -> Result<f64> {
    field.validate()?;
    Ok(g * BOHR_MAGNETON_HZ_PER_T * field.b)
}

/// First-order Zeeman shift of sublevel m at total field `b`, Hz.
pub fn zeeman_shift(m: HalfInt, g: f64, b: f64) -> f64 {
    g * BOHR_MAGNETON_HZ_PER_T * b * m.value()
}

/// Orientation factor of the quadrupole interaction,
/// (3cos²β − 1) − ε₁·sin²β·cos 2α.
pub fn angular_factor(beta: f64, epsilon1: f64, alpha: f64) -> f64 {
    let (s, c) = beta.sin_cos();
    3.0 * c * c - 1.0 - epsilon1 * s * s * (2.0 * alpha).cos()
}

fn check_d_sublevel(m: HalfInt) -> Result<()> {
    if m.twice().abs() > 5 || m.twice() % 2 == 0 {
        return Err(Error::InvalidArgument(format!("m = {} is not a D5/2 sublevel", m.value())));
    }
    Ok(())
}

/// Quadrupole shift of |D,m⟩, Hz.
pub fn quadrupole_shift(m: HalfInt, trap: &TrapConfig, theta: f64, beta: f64) -> Result<f64> {
    check_d_sublevel(m)?;
    let mm = m.value() * m.value();
    let geometry = angular_factor(beta, trap.epsilon1, trap.alpha);
    Ok(trap.dez_dz * theta * E_A0_SQUARED / (4.0 * PLANCK) * (35.0 - 12.0 * mm) / 40.0 * geometry)
}

/// Second-order Zeeman shift of |D,m⟩, Hz.
///
/// Traceless over the manifold and normalized so that
/// ν(±1/2) − ν(±5/2) = C2·B².
pub fn second_order_zeeman_shift(m: HalfInt, b: f64, species: &IonSpecies) -> Result<f64> {
    check_d_sublevel(m)?;
    let mm = m.value() * m.value();
    Ok(species.c2_quad_zeeman * b * b * (35.0 / 12.0 - mm) / 6.0)
}

/// C2·B², the differential frequency between the two echo arms, Hz.
pub fn second_order_differential(field: &FieldConfig, species: &IonSpecies) -> f64 {
    species.c2_quad_zeeman * field.b * field.b
}

/// dE_z/dz = (1 − correction)·m·ω²/q, V/m².
pub fn gradient_from_trap_frequency(omega_z: f64, species: &IonSpecies, rf_correction: f64) -> Result<f64> {
    if !(omega_z > 0.0) {
        return Err(Error::InvalidArgument(format!("trap frequency {omega_z} must be positive")));
    }
    if !(0.0..=0.01).contains(&rf_correction) {
        return Err(Error::InvalidArgument(format!("rf correction {rf_correction} outside [0, 0.01]")));
    }
    species.validate()?;
    Ok((1.0 - rf_correction) * species.mass * omega_z * omega_z / species.charge)
}

/// Inverse of [`gradient_from_trap_frequency`] with zero RF correction.
pub fn trap_frequency_from_gradient(gradient: f64, species: &IonSpecies) -> f64 {
    (species.charge * gradient / species.mass).sqrt()
}

/// Phase accumulated per second of wait time by one echo arm, rad/s.
pub fn arm_phase_rate(trap: &TrapConfig, theta: f64, beta: f64) -> f64 {
    9.0 / (20.0 * HBAR) * trap.dez_dz * theta * E_A0_SQUARED * angular_factor(beta, trap.epsilon1, trap.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(twice: i32) -> HalfInt {
        HalfInt::from_twice(twice)
    }

    fn trap0() -> TrapConfig {
        TrapConfig { epsilon1: 0.0, ..TrapConfig::default() }
    }

    #[test]
    fn zeeman_examples() {
        let f = FieldConfig { b: 3e-4, ..FieldConfig::default() };
        let dz = zeeman_splitting(&f, 1.2).unwrap();
        assert!((dz - 5.0386e6).abs() < 50.0, "{dz}");
        let f0 = FieldConfig { b: 0.0, ..f.clone() };
        assert_eq!(zeeman_splitting(&f0, 1.2).unwrap(), 0.0);
        let f2 = FieldConfig { b: 6e-4, ..f };
        assert_eq!(zeeman_splitting(&f2, 1.2).unwrap(), 2.0 * dz);
    }

    #[test]
    fn quadrupole_examples() {
        let t = trap0();
        let s52 = quadrupole_shift(m(5), &t, 2.973, 0.0).unwrap();
        let s12 = quadrupole_shift(m(1), &t, 2.973, 0.0).unwrap();
        assert!((s52 + 100.65).abs() < 0.01, "{s52}");
        assert!((s12 - 80.52).abs() < 0.01, "{s12}");
        assert_eq!(quadrupole_shift(m(-5), &t, 2.973, 0.0).unwrap(), s52);
        let magic = (1.0f64 / 3.0).sqrt().acos();
        for tw in [-5, -3, -1, 1, 3, 5] {
            assert!(quadrupole_shift(m(tw), &t, 2.973, magic).unwrap().abs() < 1e-12);
        }
        assert!(quadrupole_shift(m(7), &t, 2.973, 0.0).is_err());
        assert!(quadrupole_shift(m(2), &t, 2.973, 0.0).is_err());
    }

    #[test]
    fn quadrupole_is_traceless() {
        let t = TrapConfig { epsilon1: 0.3, alpha: 0.4, ..TrapConfig::default() };
        let shifts: Vec<f64> =
            [-5, -3, -1, 1, 3, 5].iter().map(|&tw| quadrupole_shift(m(tw), &t, 2.973, 0.7).unwrap()).collect();
        let scale = shifts.iter().map(|s| s.abs()).fold(0.0, f64::max);
        assert!(shifts.iter().sum::<f64>().abs() <= 1e-10 * scale);
    }

    #[test]
    fn second_order_examples() {
        let sp = IonSpecies::default();
        let f = FieldConfig::default();
        let diff =
            second_order_zeeman_shift(m(1), f.b, &sp).unwrap() - second_order_zeeman_shift(m(5), f.b, &sp).unwrap();
        assert!((diff - 0.279).abs() < 1e-9, "{diff}");
        assert!((second_order_differential(&f, &sp) - 0.279).abs() < 1e-12);
        assert_eq!(second_order_zeeman_shift(m(5), 0.0, &sp).unwrap(), 0.0);
        let a = second_order_zeeman_shift(m(3), 1e-4, &sp).unwrap();
        let b = second_order_zeeman_shift(m(3), 2e-4, &sp).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_calibration() {
        let sp = IonSpecies::default();
        let w = 2.0 * PI * 1.6674e6;
        let g = gradient_from_trap_frequency(w, &sp, 0.0).unwrap();
        assert!((g / 1e8 - 1.0).abs() < 1e-3, "{g}");
        let gc = gradient_from_trap_frequency(w, &sp, 0.001).unwrap();
        assert!((gc / g - 0.999).abs() < 1e-15);
        let g2 = gradient_from_trap_frequency(2.0 * w, &sp, 0.0).unwrap();
        assert!((g2 / g - 4.0).abs() < 1e-14);
        assert!((trap_frequency_from_gradient(g, &sp) / w - 1.0).abs() < 1e-12);
        assert!(gradient_from_trap_frequency(0.0, &sp, 0.0).is_err());
        assert!(gradient_from_trap_frequency(-1.0, &sp, 0.0).is_err());
    }

    #[test]
    fn phase_rate_examples() {
        let t = trap0();
        let r0 = arm_phase_rate(&t, 2.973, 0.0);
        assert!((r0 - 1138.3).abs() < 0.1, "{r0}");
        let r45 = arm_phase_rate(&t, 2.973, PI / 4.0);
        assert!((r45 / r0 - 0.25).abs() < 1e-12);
        let magic = (1.0f64 / 3.0).sqrt().acos();
        assert!(arm_phase_rate(&t, 2.973, magic).abs() < 1e-9);
    }

    #[test]
    fn trap_validation() {
        assert!(TrapConfig { epsilon1: 1.5, ..TrapConfig::default() }.validate().is_err());
        assert!(TrapConfig { rf_axial_correction: 0.02, ..TrapConfig::default() }.validate().is_err());
        assert!(TrapConfig::default().validate().is_ok());
    }
}
