//! The eight-level probe: |S,±1/2⟩ and the six |D,m⟩ sublevels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::{HalfInt, C64};

pub const N_LEVELS: usize = 8;
/// Index of |D,−5/2⟩; the D block occupies indices 2..8 in ascending m.
pub const D_OFFSET: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Manifold {
    S,
    D,
}

/// A Zeeman sublevel of either manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Level {
    pub manifold: Manifold,
    pub m: HalfInt,
}

impl Level {
    pub fn s(twice_m: i32) -> Result<Self> {
        Level::new(Manifold::S, HalfInt::from_twice(twice_m))
    }

    pub fn d(twice_m: i32) -> Result<Self> {
        Level::new(Manifold::D, HalfInt::from_twice(twice_m))
    }

    pub fn new(manifold: Manifold, m: HalfInt) -> Result<Self> {
        let max = match manifold {
            Manifold::S => 1,
            Manifold::D => 5,
        };
        if m.twice().abs() > max || m.twice() % 2 == 0 {
            return Err(Error::InvalidArgument(format!("no sublevel m = {} in {:?}", m.value(), manifold)));
        }
        Ok(Level { manifold, m })
    }

    pub fn index(self) -> usize {
        match self.manifold {
            Manifold::S => ((self.m.twice() + 1) / 2) as usize,
            Manifold::D => D_OFFSET + ((self.m.twice() + 5) / 2) as usize,
        }
    }

    pub fn from_index(i: usize) -> Level {
        assert!(i < N_LEVELS);
        if i < D_OFFSET {
            Level { manifold: Manifold::S, m: HalfInt::from_twice(2 * i as i32 - 1) }
        } else {
            Level { manifold: Manifold::D, m: HalfInt::from_twice(2 * (i - D_OFFSET) as i32 - 5) }
        }
    }

    pub fn all() -> impl Iterator<Item = Level> {
        (0..N_LEVELS).map(Level::from_index)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.m.twice() < 0 { "-" } else { "+" };
        write!(f, "{:?}:{}{}/2", self.manifold, sign, self.m.twice().abs())
    }
}

impl FromStr for Level {
    type Err = Error;

    /// Accepts labels such as `S:-1/2`, `D:+5/2` or `D:5/2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown level label `{s}`"));
        let (manifold, m) = s.split_once(':').ok_or_else(bad)?;
        let manifold = match manifold {
            "S" => Manifold::S,
            "D" => Manifold::D,
            _ => return Err(bad()),
        };
        let (num, den) = m.split_once('/').ok_or_else(bad)?;
        if den != "2" {
            return Err(bad());
        }
        let num = num.strip_prefix('+').unwrap_or(num);
        let twice: i32 = num.parse().map_err(|_| bad())?;
        Level::new(manifold, HalfInt::from_twice(twice)).map_err(|_| bad())
    }
}

/// Amplitudes over [S−1/2, S+1/2, D−5/2, …, D+5/2].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    amps: [C64; N_LEVELS],
}

impl StateVector {
    pub fn basis(level: Level) -> Self {
        let mut amps = [C64::new(0.0, 0.0); N_LEVELS];
        amps[level.index()] = C64::new(1.0, 0.0);
        StateVector { amps }
    }

    /// Normalizes the given amplitudes; rejects the zero vector.
    pub fn from_amplitudes(amps: [C64; N_LEVELS]) -> Result<Self> {
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument("state vector has zero or non-finite norm".into()));
        }
        Ok(StateVector { amps: amps.map(|a| a / norm) })
    }

    /// (|D,−5/2⟩ + |D,−1/2⟩)/√2, the state after the two preparation pulses
    /// up to single-level phases.
    pub fn probe_superposition() -> Self {
        let mut amps = [C64::new(0.0, 0.0); N_LEVELS];
        amps[Level::d(-5).unwrap().index()] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        amps[Level::d(-1).unwrap().index()] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        StateVector { amps }
    }

    pub fn amplitudes(&self) -> &[C64; N_LEVELS] {
        &self.amps
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [C64; N_LEVELS] {
        &mut self.amps
    }

    pub fn amplitude(&self, level: Level) -> C64 {
        self.amps[level.index()]
    }

    pub fn population(&self, level: Level) -> f64 {
        self.amps[level.index()].norm_sqr()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn d_populations(&self) -> [f64; 6] {
        std::array::from_fn(|k| self.amps[D_OFFSET + k].norm_sqr())
    }

    /// arg(a_b / a_a).
    pub fn relative_phase(&self, a: Level, b: Level) -> f64 {
        (self.amplitude(b) * self.amplitude(a).conj()).arg()
    }
}
