//! Physical constants (CODATA 2018), SI units.
//!
//! Every conversion in the crate reads from this table.

use std::f64::consts::PI;

/// Planck constant, J·s (exact).
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = PLANCK / (2.0 * PI);

/// Bohr magneton, J/T.
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;

/// Elementary charge, C (exact).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Bohr radius, m.
pub const BOHR_RADIUS: f64 = 5.291_772_109_03e-11;

/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// One e·a₀² expressed in C·m² (≈ 4.486551e-40).
pub const E_A0_SQUARED: f64 = ELEMENTARY_CHARGE * BOHR_RADIUS * BOHR_RADIUS;

/// μ_B / h in Hz/T (≈ 1.3996245e10).
pub const BOHR_MAGNETON_HZ_PER_T: f64 = BOHR_MAGNETON / PLANCK;

/// Atomic mass of ⁸⁸Sr, u.
pub const SR88_MASS_U: f64 = 87.905_612;

/// 95% quantile of χ² with one degree of freedom.
pub const CHI2_1DOF_95: f64 = 3.841_458_820_694_124;

/// Two-sided 95% standard-normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_values() {
        assert!((E_A0_SQUARED / 4.48655e-40 - 1.0).abs() < 1e-5);
        assert!((BOHR_MAGNETON_HZ_PER_T / 1.3996245e10 - 1.0).abs() < 1e-7);
        assert!((SR88_MASS_U * ATOMIC_MASS_UNIT / 1.45975e-25 - 1.0).abs() < 1e-4);
    }
}
