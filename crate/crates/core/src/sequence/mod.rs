//! Pulse sequences: representation, construction, text format and execution.

mod dsl;
mod exec;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{Level, Manifold};

pub use dsl::{parse_sequence_text, serialize_sequence};
pub use exec::{analytic_phase, apply_optical_pulse, apply_rf_pulse, free_evolve, run_sequence, CompiledSequence};

/// A numeric sequence parameter, possibly a scan variable bound at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Value(f64),
    Var(String),
}

impl Param {
    pub fn value(&self) -> Result<f64> {
        match self {
            Param::Value(v) => Ok(*v),
            Param::Var(name) => Err(Error::UnboundVariable(name.clone())),
        }
    }

    fn bind(&mut self, name: &str, value: f64) {
        if matches!(self, Param::Var(n) if n == name) {
            *self = Param::Value(value);
        }
    }
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        Param::Value(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum SequenceElement {
    /// Two-level rotation on |S,−1/2⟩ ↔ `target`.
    OpticalPulse {
        target: DLevel,
        area: Param,
        laser_phase: Param,
    },
    /// Spin-5/2 rotation of the whole D manifold.
    RfPulse {
        area: Param,
        rf_phase: Param,
    },
    Wait {
        tau: Param,
    },
    Measure,
}

/// A D₅/₂ sublevel, stored as 2m.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct DLevel(i32);

impl DLevel {
    pub fn new(twice_m: i32) -> Result<Self> {
        Level::d(twice_m).map(|_| DLevel(twice_m))
    }

    pub fn level(self) -> Level {
        Level::d(self.0).expect("validated at construction")
    }

    pub fn twice_m(self) -> i32 {
        self.0
    }
}

impl TryFrom<i32> for DLevel {
    type Error = Error;

    fn try_from(v: i32) -> Result<Self> {
        DLevel::new(v)
    }
}

impl From<DLevel> for i32 {
    fn from(d: DLevel) -> i32 {
        d.0
    }
}

impl fmt::Display for DLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.level().fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    /// Level the ion is pumped into before the first element.
    pub initial: Level,
    pub elements: Vec<SequenceElement>,
}

impl PulseSequence {
    pub fn new(elements: Vec<SequenceElement>) -> Self {
        PulseSequence { initial: optical_ground(), elements }
    }

    /// Number of RF pulses.
    pub fn n_echo(&self) -> usize {
        self.elements.iter().filter(|e| matches!(e, SequenceElement::RfPulse { .. })).count()
    }

    /// The common wait duration, if every wait is bound and equal.
    pub fn tau(&self) -> Option<f64> {
        let mut taus = self.elements.iter().filter_map(|e| match e {
            SequenceElement::Wait { tau } => Some(tau.value().ok()),
            _ => None,
        });
        let first = taus.next()??;
        taus.all(|t| t == Some(first)).then_some(first)
    }

    /// Sum of all bound wait durations.
    pub fn total_wait(&self) -> f64 {
        self.elements
            .iter()
            .filter_map(|e| match e {
                SequenceElement::Wait { tau: Param::Value(t) } => Some(*t),
                _ => None,
            })
            .sum()
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for e in &self.elements {
            let params: Vec<&Param> = match e {
                SequenceElement::OpticalPulse { area, laser_phase, .. } => vec![area, laser_phase],
                SequenceElement::RfPulse { area, rf_phase } => vec![area, rf_phase],
                SequenceElement::Wait { tau } => vec![tau],
                SequenceElement::Measure => vec![],
            };
            out.extend(params.into_iter().filter_map(|p| match p {
                Param::Var(n) => Some(n.clone()),
                Param::Value(_) => None,
            }));
        }
        out
    }

    /// Substitutes a scan variable everywhere it appears.
    pub fn bind(&self, name: &str, value: f64) -> PulseSequence {
        let mut out = self.clone();
        for e in &mut out.elements {
            match e {
                SequenceElement::OpticalPulse { area, laser_phase, .. } => {
                    area.bind(name, value);
                    laser_phase.bind(name, value);
                }
                SequenceElement::RfPulse { area, rf_phase } => {
                    area.bind(name, value);
                    rf_phase.bind(name, value);
                }
                SequenceElement::Wait { tau } => tau.bind(name, value),
                SequenceElement::Measure => {}
            }
        }
        out
    }

    /// Checks element-level invariants on bound parameters.
    pub fn validate(&self) -> Result<()> {
        if self.initial.manifold == Manifold::S && self.initial != optical_ground() {
            return Err(Error::Sequence(format!("cannot initialize in {}", self.initial)));
        }
        for e in &self.elements {
            let (area, tau) = match e {
                SequenceElement::OpticalPulse { area, .. } | SequenceElement::RfPulse { area, .. } => {
                    (Some(area), None)
                }
                SequenceElement::Wait { tau } => (None, Some(tau)),
                SequenceElement::Measure => (None, None),
            };
            if let Some(Param::Value(a)) = area {
                if !(*a >= 0.0) || !a.is_finite() {
                    return Err(Error::Sequence(format!("pulse area {a} must be finite and >= 0")));
                }
            }
            if let Some(Param::Value(t)) = tau {
                if !(*t >= 0.0) || !t.is_finite() {
                    return Err(Error::Sequence(format!("wait {t} must be finite and >= 0")));
                }
            }
        }
        Ok(())
    }
}

/// |S,−1/2⟩, the only ground level the laser addresses.
pub fn optical_ground() -> Level {
    Level::s(-1).expect("valid level")
}

fn optical(target: i32, area: f64, laser_phase: f64) -> SequenceElement {
    SequenceElement::OpticalPulse {
        target: DLevel::new(target).expect("valid D level"),
        area: Param::Value(area),
        laser_phase: Param::Value(laser_phase),
    }
}

/// The quadrupole echo experiment: prepare (|−5/2⟩ + |−1/2⟩)/√2, apply
/// `n_echo` blocks of [wait τ, RF π, wait τ] with RF phases 0, π, 0, π, …,
/// map |D,−5/2⟩ back to S and close the Ramsey interferometer.
pub fn build_quadrupole_dd_sequence(n_echo: usize, tau: f64, laser_phase: f64) -> Result<PulseSequence> {
    if n_echo < 2 || !n_echo.is_multiple_of(2) {
        return Err(Error::Sequence(format!("n_echo must be even and >= 2, got {n_echo}")));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Sequence(format!("wait {tau} must be finite and >= 0")));
    }
    let mut elements = vec![optical(-5, PI / 2.0, 0.0), optical(-1, PI, 0.0)];
    for k in 0..n_echo {
        let rf_phase = if k % 2 == 0 { 0.0 } else { PI };
        elements.push(SequenceElement::Wait { tau: Param::Value(tau) });
        elements.push(SequenceElement::RfPulse { area: Param::Value(PI), rf_phase: Param::Value(rf_phase) });
        elements.push(SequenceElement::Wait { tau: Param::Value(tau) });
    }
    elements.push(optical(-5, PI, 0.0));
    elements.push(optical(-1, PI / 2.0, laser_phase));
    elements.push(SequenceElement::Measure);
    Ok(PulseSequence::new(elements))
}

/// The same interferometer without echo pulses: one free precession of
/// length `wait`.
pub fn build_ramsey_sequence(wait: f64, laser_phase: f64) -> Result<PulseSequence> {
    if !(wait >= 0.0) || !wait.is_finite() {
        return Err(Error::Sequence(format!("wait {wait} must be finite and >= 0")));
    }
    Ok(PulseSequence::new(vec![
        optical(-5, PI / 2.0, 0.0),
        optical(-1, PI, 0.0),
        SequenceElement::Wait { tau: Param::Value(wait) },
        optical(-5, PI, 0.0),
        optical(-1, PI / 2.0, laser_phase),
        SequenceElement::Measure,
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_structure() {
        let seq = build_quadrupole_dd_sequence(2, 1e-4, 0.3).unwrap();
        assert_eq!(seq.elements.len(), 11);
        assert_eq!(seq.n_echo(), 2);
        assert_eq!(seq.tau(), Some(1e-4));
        let rf_phases: Vec<f64> = seq
            .elements
            .iter()
            .filter_map(|e| match e {
                SequenceElement::RfPulse { rf_phase, .. } => Some(rf_phase.value().unwrap()),
                _ => None,
            })
            .collect();
        assert_eq!(rf_phases, vec![0.0, PI]);
        assert_eq!(seq.elements.last(), Some(&SequenceElement::Measure));
    }

    #[test]
    fn every_rf_pulse_is_bracketed_by_waits() {
        let seq = build_quadrupole_dd_sequence(8, 2.5e-4, 0.0).unwrap();
        for (i, e) in seq.elements.iter().enumerate() {
            if matches!(e, SequenceElement::RfPulse { .. }) {
                assert!(matches!(seq.elements[i - 1], SequenceElement::Wait { .. }));
                assert!(matches!(seq.elements[i + 1], SequenceElement::Wait { .. }));
            }
        }
        assert!((seq.total_wait() - 4e-3).abs() < 1e-15);
    }

    #[test]
    fn builder_rejects_odd_or_small_n() {
        assert!(build_quadrupole_dd_sequence(3, 1e-4, 0.0).is_err());
        assert!(build_quadrupole_dd_sequence(0, 1e-4, 0.0).is_err());
        assert!(build_quadrupole_dd_sequence(2, -1e-4, 0.0).is_err());
        assert!(build_quadrupole_dd_sequence(2, 0.0, 0.0).is_ok());
    }

    #[test]
    fn binding() {
        let seq = PulseSequence::new(vec![
            SequenceElement::Wait { tau: Param::Var("t".into()) },
            SequenceElement::RfPulse { area: Param::Value(PI), rf_phase: Param::Var("p".into()) },
        ]);
        assert_eq!(seq.variables().into_iter().collect::<Vec<_>>(), vec!["p", "t"]);
        let bound = seq.bind("t", 1e-3);
        assert_eq!(bound.tau(), Some(1e-3));
        assert_eq!(bound.variables().len(), 1);
    }
}
