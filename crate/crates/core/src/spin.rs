//! Finite-dimensional angular-momentum algebra.
//!
//! All matrices use the |j, m⟩ basis ordered by ascending m (m = −j, …, +j).
//! Rotations are active: R(θ, n) = exp(−iθ n·J).

use std::ops::Mul;

use nalgebra::{Complex, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// A quantum number stored as twice its value, so half-integers are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const fn from_twice(twice: i32) -> Self {
        HalfInt(twice)
    }

    /// Accepts only values whose double is an integer.
    pub fn from_f64(x: f64) -> Option<Self> {
        let twice = 2.0 * x;
        if x.is_finite() && (twice - twice.round()).abs() < 1e-9 && twice.abs() < 1e6 {
            Some(HalfInt(twice.round() as i32))
        } else {
            None
        }
    }

    pub const fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

/// A (2j+1)×(2j+1) complex matrix acting on one angular-momentum multiplet.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinMatrix(DMatrix<C64>);

impl SpinMatrix {
    pub fn from_matrix(m: DMatrix<C64>) -> Self {
        assert!(m.is_square(), "spin matrices are square");
        SpinMatrix(m)
    }

    pub fn identity(dim: usize) -> Self {
        SpinMatrix(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn adjoint(&self) -> SpinMatrix {
        SpinMatrix(self.0.adjoint())
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &SpinMatrix) -> f64 {
        assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) <= tol
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        (&self.adjoint() * self).max_abs_diff(&SpinMatrix::identity(self.dim())) <= tol
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }
}

impl Mul for &SpinMatrix {
    type Output = SpinMatrix;

    fn mul(self, rhs: &SpinMatrix) -> SpinMatrix {
        SpinMatrix(&self.0 * &rhs.0)
    }
}

/// Cartesian and ladder operators of one multiplet.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub j: HalfInt,
    pub jx: SpinMatrix,
    pub jy: SpinMatrix,
    pub jz: SpinMatrix,
    pub jplus: SpinMatrix,
    pub jminus: SpinMatrix,
}

fn check_j(j: f64) -> Result<HalfInt> {
    match HalfInt::from_f64(j) {
        Some(h) if h.twice() >= 0 && h.twice() <= 30 => Ok(h),
        _ => Err(Error::InvalidSpin(j)),
    }
}

/// Index of m in the ascending basis.
pub fn basis_index(j: HalfInt, m: HalfInt) -> Option<usize> {
    let offset = m.twice() + j.twice();
    if m.twice().abs() <= j.twice() && offset % 2 == 0 {
        Some((offset / 2) as usize)
    } else {
        None
    }
}

pub fn spin_operators(j: f64) -> Result<SpinOperators> {
    let jh = check_j(j)?;
    let dim = (jh.twice() + 1) as usize;
    let m_of = |i: usize| -j + i as f64;

    let mut jz = DMatrix::zeros(dim, dim);
    let mut jp = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let m = m_of(i);
        jz[(i, i)] = C64::new(m, 0.0);
        if i + 1 < dim {
            // ⟨m+1|J₊|m⟩
            jp[(i + 1, i)] = C64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
    }
    let jm = jp.adjoint();
    let jx = (&jp + &jm).map(|z| z * 0.5);
    let jy = (&jp - &jm).map(|z| z * C64::new(0.0, -0.5));

    Ok(SpinOperators {
        j: jh,
        jx: SpinMatrix(jx),
        jy: SpinMatrix(jy),
        jz: SpinMatrix(jz),
        jplus: SpinMatrix(jp),
        jminus: SpinMatrix(jm),
    })
}

/// exp(−i·t·H) for Hermitian H, via eigendecomposition.
pub fn hermitian_exp(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let eig = SymmetricEigen::new(h.clone());
    let v = &eig.eigenvectors;
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::from_polar(1.0, -t * l)));
    v * phases * v.adjoint()
}

/// U = exp(−i·area·(Jx cos φ + Jy sin φ)).
///
/// The axis is Jy turned about z by φ − π/2, so
/// U_{m′m} = exp(−i(φ − π/2)(m′ − m))·d_{m′m}(area).
pub fn rotation_unitary(j: f64, area: f64, axis_phase: f64) -> Result<SpinMatrix> {
    if !axis_phase.is_finite() {
        return Err(Error::InvalidArgument(format!("axis phase {axis_phase} is not finite")));
    }
    let mut d = wigner_d_matrix(j, area)?.0;
    let turn = axis_phase - std::f64::consts::FRAC_PI_2;
    let dim = d.nrows();
    for row in 0..dim {
        for col in 0..dim {
            if row != col {
                d[(row, col)] *= C64::from_polar(1.0, -turn * (row as f64 - col as f64));
            }
        }
    }
    Ok(SpinMatrix(d))
}

fn factorial(n: i32) -> f64 {
    debug_assert!((0..=30).contains(&n));
    (1..=n as u64).product::<u64>() as f64
}

/// Closed-form Wigner small-d matrix d^j_{m′m}(θ) = ⟨j m′| exp(−iθJy) |j m⟩.
///
/// Row index is m′, column index is m, both ascending.
pub fn wigner_d_matrix(j: f64, theta: f64) -> Result<SpinMatrix> {
    let jh = check_j(j)?;
    if !theta.is_finite() {
        return Err(Error::InvalidArgument(format!("rotation angle {theta} is not finite")));
    }
    let tj = jh.twice();
    let dim = (tj + 1) as usize;
    let (sh, ch) = (theta / 2.0).sin_cos();
    let mut out = DMatrix::zeros(dim, dim);

    for row in 0..dim {
        for col in 0..dim {
            // integer combinations: j ± m are integers even when j is half-integral
            let jpm_p = row as i32; // j + m′
            let jmm_p = tj - row as i32; // j − m′
            let jpm = col as i32; // j + m
            let jmm = tj - col as i32; // j − m
            let dm = jpm_p - jpm; // m′ − m
            let prefactor = (factorial(jpm_p) * factorial(jmm_p) * factorial(jpm) * factorial(jmm)).sqrt();

            let s_min = 0.max(-dm);
            let s_max = jpm.min(jmm_p);
            let mut acc = 0.0;
            for s in s_min..=s_max {
                let sign = if (dm + s).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                let denom = factorial(jpm - s) * factorial(s) * factorial(dm + s) * factorial(jmm_p - s);
                let cos_pow = tj - dm - 2 * s;
                let sin_pow = dm + 2 * s;
                acc += sign * ch.powi(cos_pow) * sh.powi(sin_pow) / denom;
            }
            out[(row, col)] = C64::new(prefactor * acc, 0.0);
        }
    }
    Ok(SpinMatrix(out))
}
