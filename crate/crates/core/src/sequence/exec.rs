//! Execution of pulse sequences on the eight-level state.
//!
//! Pulses are instantaneous unless the model sets an RF Rabi rate. Waits
//! integrate the diagonal Hamiltonian exactly along the field trajectory.

use std::f64::consts::TAU;

use nalgebra::DMatrix;

use super::{DLevel, PulseSequence, SequenceElement};
use crate::atom::{arm_phase_rate, quadrupole_shift, IonModel};
use crate::constants::BOHR_MAGNETON_HZ_PER_T;
use crate::error::{Error, Result};
use crate::noise::FieldTrajectory;
use crate::spin::{hermitian_exp, rotation_unitary, spin_operators, SpinMatrix, C64};
use crate::state::{Level, Manifold, StateVector, D_OFFSET, N_LEVELS};

/// Per-level frequency coefficients of the diagonal Hamiltonian.
#[derive(Debug, Clone)]
struct LevelShifts {
    /// Hz/T
    zeeman: [f64; N_LEVELS],
    /// Hz
    quadrupole: [f64; N_LEVELS],
    /// Hz/T²
    second_order: [f64; N_LEVELS],
    b0: f64,
}

impl LevelShifts {
    fn new(model: &IonModel) -> Result<Self> {
        let mut out = LevelShifts {
            zeeman: [0.0; N_LEVELS],
            quadrupole: [0.0; N_LEVELS],
            second_order: [0.0; N_LEVELS],
            b0: model.field.b,
        };
        for level in Level::all() {
            let i = level.index();
            let m = level.m.value();
            match level.manifold {
                Manifold::S => out.zeeman[i] = model.species.g_ground * BOHR_MAGNETON_HZ_PER_T * m,
                Manifold::D => {
                    out.zeeman[i] = model.species.g_d * BOHR_MAGNETON_HZ_PER_T * m;
                    out.quadrupole[i] = quadrupole_shift(level.m, &model.trap, model.theta, model.field.beta)?;
                    if model.second_order_zeeman {
                        out.second_order[i] = model.species.c2_quad_zeeman * (35.0 / 12.0 - m * m) / 6.0;
                    }
                }
            }
        }
        Ok(out)
    }

    fn evolve(
        &self,
        amps: &mut [C64; N_LEVELS],
        levels: std::ops::Range<usize>,
        t0: f64,
        tau: f64,
        traj: &FieldTrajectory,
    ) {
        if tau == 0.0 {
            return;
        }
        let (lin, quad) =
            if traj.is_zero() { (0.0, self.b0 * self.b0 * tau) } else { traj.integrals(t0, t0 + tau, self.b0) };
        for i in levels {
            if amps[i] == C64::new(0.0, 0.0) {
                continue;
            }
            let cycles = self.zeeman[i] * self.b0 * tau
                + self.zeeman[i] * lin
                + self.quadrupole[i] * tau
                + self.second_order[i] * quad;
            amps[i] *= C64::from_polar(1.0, -TAU * cycles);
        }
    }
}

type Rf6 = [[C64; 6]; 6];

fn to_rf6(m: &SpinMatrix) -> Box<Rf6> {
    Box::new(std::array::from_fn(|r| std::array::from_fn(|c| m.entry(r, c))))
}

fn optical_unitary(area: f64, laser_phase: f64) -> Result<[[C64; 2]; 2]> {
    // spin-1/2 ordering: |S,−1/2⟩ ↔ m = −1/2, |D,m⟩ ↔ m = +1/2
    let u = rotation_unitary(0.5, area, laser_phase)?;
    Ok([[u.entry(0, 0), u.entry(0, 1)], [u.entry(1, 0), u.entry(1, 1)]])
}

fn apply2(amps: &mut [C64; N_LEVELS], s: usize, d: usize, u: &[[C64; 2]; 2]) {
    let (a, b) = (amps[s], amps[d]);
    amps[s] = u[0][0] * a + u[0][1] * b;
    amps[d] = u[1][0] * a + u[1][1] * b;
}

fn apply6(amps: &mut [C64; N_LEVELS], u: &Rf6) {
    let d: [C64; 6] = std::array::from_fn(|k| amps[D_OFFSET + k]);
    for (r, row) in u.iter().enumerate() {
        amps[D_OFFSET + r] = row.iter().zip(d.iter()).map(|(x, y)| x * y).sum();
    }
}

fn check_normalized(state: &StateVector) -> Result<()> {
    let n = state.norm_sqr();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("state norm² is {n}, expected 1")));
    }
    Ok(())
}

/// Two-level rotation on |S,−1/2⟩ ↔ |D,target⟩ about cos φ·x + sin φ·y.
pub fn apply_optical_pulse(state: &StateVector, target: DLevel, area: f64, laser_phase: f64) -> Result<StateVector> {
    check_normalized(state)?;
    let u = optical_unitary(area, laser_phase)?;
    let mut out = *state;
    apply2(out.amplitudes_mut(), 0, target.level().index(), &u);
    Ok(out)
}

/// Spin-5/2 rotation of the D manifold; S amplitudes untouched.
pub fn apply_rf_pulse(state: &StateVector, area: f64, rf_phase: f64) -> Result<StateVector> {
    check_normalized(state)?;
    let u = to_rf6(&rotation_unitary(2.5, area, rf_phase)?);
    let mut out = *state;
    apply6(out.amplitudes_mut(), &u);
    Ok(out)
}

/// Free precession over [t_start, t_start + tau] under Zeeman, quadrupole
/// and second-order Zeeman shifts.
pub fn free_evolve(
    state: &StateVector,
    t_start: f64,
    tau: f64,
    model: &IonModel,
    trajectory: &FieldTrajectory,
) -> Result<StateVector> {
    check_normalized(state)?;
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative wait {tau}")));
    }
    let shifts = LevelShifts::new(model)?;
    let mut out = *state;
    shifts.evolve(out.amplitudes_mut(), 0..N_LEVELS, t_start, tau, trajectory);
    Ok(out)
}

#[derive(Debug, Clone)]
enum Op {
    Optical { d: usize, u: [[C64; 2]; 2] },
    Rf(Box<Rf6>),
    RfFinite { area: f64, phase: f64 },
    Wait(f64),
}

/// A sequence with all trajectory-independent unitaries precomputed, for
/// running many shots of the same program.
#[derive(Debug, Clone)]
pub struct CompiledSequence {
    ops: Vec<Op>,
    shifts: LevelShifts,
    rabi_rate: Option<f64>,
    jx: DMatrix<C64>,
    jy: DMatrix<C64>,
    duration: f64,
}

impl CompiledSequence {
    /// Rejects unbound variables, elements after `measure`, and programs
    /// without a `measure`.
    pub fn new(seq: &PulseSequence, model: &IonModel) -> Result<Self> {
        seq.validate()?;
        model.validate()?;
        let measure_at = seq
            .elements
            .iter()
            .position(|e| matches!(e, SequenceElement::Measure))
            .ok_or_else(|| Error::Sequence("sequence has no `measure`".into()))?;
        if measure_at + 1 != seq.elements.len() {
            return Err(Error::Sequence("elements follow `measure`".into()));
        }
        let mut ops = Vec::with_capacity(measure_at);
        let mut duration = 0.0;
        for e in &seq.elements[..measure_at] {
            ops.push(match e {
                SequenceElement::OpticalPulse { target, area, laser_phase } => {
                    Op::Optical { d: target.level().index(), u: optical_unitary(area.value()?, laser_phase.value()?)? }
                }
                SequenceElement::RfPulse { area, rf_phase } => match model.rf_rabi_rate {
                    None => Op::Rf(to_rf6(&rotation_unitary(2.5, area.value()?, rf_phase.value()?)?)),
                    Some(rate) => {
                        duration += area.value()? / rate;
                        Op::RfFinite { area: area.value()?, phase: rf_phase.value()? }
                    }
                },
                SequenceElement::Wait { tau } => {
                    duration += tau.value()?;
                    Op::Wait(tau.value()?)
                }
                SequenceElement::Measure => unreachable!(),
            });
        }
        let ops5 = spin_operators(2.5)?;
        Ok(CompiledSequence {
            ops,
            shifts: LevelShifts::new(model)?,
            rabi_rate: model.rf_rabi_rate,
            jx: ops5.jx.into_matrix(),
            jy: ops5.jy.into_matrix(),
            duration,
        })
    }

    /// Total time the program spends in waits and finite pulses, s.
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn run(&self, initial: &StateVector, trajectory: &FieldTrajectory) -> StateVector {
        let mut state = *initial;
        let amps = state.amplitudes_mut();
        let mut t = 0.0;
        for op in &self.ops {
            match op {
                Op::Optical { d, u } => apply2(amps, 0, *d, u),
                Op::Rf(u) => apply6(amps, u),
                Op::Wait(tau) => {
                    self.shifts.evolve(amps, 0..N_LEVELS, t, *tau, trajectory);
                    t += tau;
                }
                Op::RfFinite { area, phase } => {
                    let rate = self.rabi_rate.expect("finite pulses need a Rabi rate");
                    let dt = area / rate;
                    let u = self.finite_rf(*phase, rate, dt, trajectory.offset_at(t + dt / 2.0));
                    apply6(amps, &u);
                    self.shifts.evolve(amps, 0..D_OFFSET, t, dt, trajectory);
                    t += dt;
                }
            }
        }
        state
    }

    // Rotating frame of an RF drive resonant with the nominal Zeeman
    // splitting: only the field offset and the m²-dependent shifts detune it.
    fn finite_rf(&self, phase: f64, rate: f64, dt: f64, offset: f64) -> Rf6 {
        let (s, c) = phase.sin_cos();
        let mut h = self.jx.map(|z| z * (rate * c)) + self.jy.map(|z| z * (rate * s));
        let b = self.shifts.b0 + offset;
        for k in 0..6 {
            let i = D_OFFSET + k;
            let hz = self.shifts.zeeman[i] * offset + self.shifts.quadrupole[i] + self.shifts.second_order[i] * b * b;
            h[(k, k)] += C64::new(TAU * hz, 0.0);
        }
        let u = hermitian_exp(&h, dt);
        std::array::from_fn(|r| std::array::from_fn(|c| u[(r, c)]))
    }
}

/// Runs `seq` from `initial` and returns the state just before detection.
pub fn run_sequence(
    initial: &StateVector,
    seq: &PulseSequence,
    model: &IonModel,
    trajectory: &FieldTrajectory,
) -> Result<StateVector> {
    check_normalized(initial)?;
    Ok(CompiledSequence::new(seq, model)?.run(initial, trajectory))
}

/// 2·n·τ times the per-arm quadrupole phase rate, rad.
pub fn analytic_phase(n_echo: usize, tau: f64, model: &IonModel) -> f64 {
    2.0 * n_echo as f64 * tau * arm_phase_rate(&model.trap, model.theta, model.field.beta)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    use super::*;
    use crate::sequence::{build_quadrupole_dd_sequence, optical_ground, Param};

    fn d(twice_m: i32) -> Level {
        Level::d(twice_m).unwrap()
    }

    fn prepared() -> StateVector {
        let s = StateVector::basis(optical_ground());
        let s = apply_optical_pulse(&s, DLevel::new(-5).unwrap(), PI / 2.0, 0.0).unwrap();
        apply_optical_pulse(&s, DLevel::new(-1).unwrap(), PI, 0.0).unwrap()
    }

    #[test]
    fn preparation_pulses_make_probe_superposition() {
        let s = prepared();
        assert!((s.amplitude(d(-5)).norm() - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((s.amplitude(d(-1)).norm() - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_area_and_double_pi() {
        let s = prepared();
        let target = DLevel::new(-5).unwrap();
        assert_eq!(apply_optical_pulse(&s, target, 0.0, 1.3).unwrap(), s);
        let twice = apply_optical_pulse(&apply_optical_pulse(&s, target, PI, 0.4).unwrap(), target, PI, 0.4).unwrap();
        for level in Level::all() {
            assert!((twice.population(level) - s.population(level)).abs() < 1e-15);
        }
        assert!((twice.amplitude(d(-5)) + s.amplitude(d(-5))).norm() < 1e-15);
    }

    #[test]
    fn rf_pi_maps_probe_to_upper_pair() {
        let s = apply_rf_pulse(&prepared(), PI, 0.0).unwrap();
        assert!((s.population(d(5)) - 0.5).abs() < 1e-12);
        assert!((s.population(d(1)) - 0.5).abs() < 1e-12);
        let stretched = apply_rf_pulse(&StateVector::basis(d(-5)), PI, 0.0).unwrap();
        assert!((stretched.population(d(5)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_evolution_phases() {
        let model = IonModel { theta: 0.0, second_order_zeeman: false, ..IonModel::default() };
        let s = StateVector::probe_superposition();
        let tau = 1e-6;
        let out = free_evolve(&s, 0.0, tau, &model, &FieldTrajectory::zero()).unwrap();
        let split = model.species.g_d * BOHR_MAGNETON_HZ_PER_T * model.field.b;
        let expected = (TAU * 2.0 * split * tau).rem_euclid(TAU);
        let got = out.relative_phase(d(-1), d(-5)).rem_euclid(TAU);
        assert!((got - expected).abs() < 1e-9, "{got} {expected}");
        assert_eq!(free_evolve(&s, 0.0, 0.0, &model, &FieldTrajectory::zero()).unwrap(), s);
        assert!(free_evolve(&s, 0.0, -1.0, &model, &FieldTrajectory::zero()).is_err());
    }

    #[test]
    fn quadrupole_phase_per_wait() {
        let mut model = IonModel::default();
        model.field.b = 0.0;
        model.field.beta = 0.0;
        model.second_order_zeeman = false;
        let tau = 1e-4;
        let out = free_evolve(&StateVector::probe_superposition(), 0.0, tau, &model, &FieldTrajectory::zero()).unwrap();
        let expected = 1138.3 * tau;
        assert!((out.relative_phase(d(-1), d(-5)) - expected).abs() < 1e-4 * expected);
    }

    #[test]
    fn measure_must_be_last_and_present() {
        let model = IonModel::default();
        let init = StateVector::basis(optical_ground());
        let mut seq = build_quadrupole_dd_sequence(2, 1e-5, 0.0).unwrap();
        seq.elements.push(SequenceElement::Wait { tau: Param::Value(1e-6) });
        assert!(run_sequence(&init, &seq, &model, &FieldTrajectory::zero()).is_err());
        seq.elements.truncate(seq.elements.len() - 2);
        assert!(run_sequence(&init, &seq, &model, &FieldTrajectory::zero()).is_err());
        let unbound = build_quadrupole_dd_sequence(2, 1e-5, 0.0).unwrap();
        let mut unbound = unbound;
        unbound.elements[0] = SequenceElement::Wait { tau: Param::Var("t".into()) };
        assert!(matches!(
            run_sequence(&init, &unbound, &model, &FieldTrajectory::zero()),
            Err(Error::UnboundVariable(_))
        ));
    }

    #[test]
    fn compiled_sequence_tracks_duration() {
        let mut model = IonModel::default();
        let seq = build_quadrupole_dd_sequence(8, 250e-6, 0.0).unwrap();
        assert!((CompiledSequence::new(&seq, &model).unwrap().duration() - 4e-3).abs() < 1e-15);
        model.rf_rabi_rate = Some(2.0 * PI * 50e3);
        let expected = 4e-3 + 8.0 * PI / model.rf_rabi_rate.unwrap();
        assert!((CompiledSequence::new(&seq, &model).unwrap().duration() - expected).abs() < 1e-15);
    }

    #[test]
    fn analytic_phase_examples() {
        let mut model = IonModel::default();
        model.field.beta = 0.0;
        assert!((analytic_phase(8, 250e-6, &model) - 4.553).abs() < 1e-3);
        assert_eq!(analytic_phase(8, 0.0, &model), 0.0);
        model.field.beta = (1.0f64 / 3.0).sqrt().acos();
        assert!(analytic_phase(8, 250e-6, &model).abs() < 1e-12);
    }
}
