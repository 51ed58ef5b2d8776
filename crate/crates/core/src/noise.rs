//! Magnetic-field noise processes.
//!
//! A trajectory is a piecewise-linear offset δB(t) added to the nominal field.
//! Sampled processes only produce constant pieces; linear pieces exist so a
//! deterministic drift can be integrated exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    QuasiStatic,
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// Standard deviation of the per-shot static offset, T.
    pub sigma_b: f64,
    /// Random-walk diffusion, T/√s.
    pub drift_rate_sigma: f64,
    /// Random-walk step, s.
    pub step_dt: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { kind: NoiseKind::None, sigma_b: 0.0, drift_rate_sigma: 0.0, step_dt: 1e-4 }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel::default()
    }

    pub fn quasi_static(sigma_b: f64) -> Self {
        NoiseModel { kind: NoiseKind::QuasiStatic, sigma_b, ..NoiseModel::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_b >= 0.0 && self.drift_rate_sigma >= 0.0) {
            return Err(Error::InvalidArgument("noise standard deviations must be >= 0".into()));
        }
        if self.kind == NoiseKind::RandomWalk && !(self.step_dt > 0.0) {
            return Err(Error::InvalidArgument("random-walk step_dt must be > 0".into()));
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        match self.kind {
            NoiseKind::None => true,
            NoiseKind::QuasiStatic => self.sigma_b == 0.0,
            NoiseKind::RandomWalk => self.drift_rate_sigma == 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Start time, s. The segment lasts until the next one starts.
    pub start: f64,
    /// δB at `start`, T.
    pub offset: f64,
    /// dδB/dt, T/s.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTrajectory {
    segments: Vec<Segment>,
}

impl Default for FieldTrajectory {
    fn default() -> Self {
        FieldTrajectory::zero()
    }
}

impl FieldTrajectory {
    pub fn zero() -> Self {
        FieldTrajectory::constant(0.0)
    }

    pub fn constant(offset: f64) -> Self {
        FieldTrajectory { segments: vec![Segment { start: 0.0, offset, slope: 0.0 }] }
    }

    /// δB(t) = offset + rate·t.
    pub fn linear(offset: f64, rate: f64) -> Self {
        FieldTrajectory { segments: vec![Segment { start: 0.0, offset, slope: rate }] }
    }

    /// Segments must start at t = 0 and be strictly increasing in time.
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        if segments.first().map(|s| s.start) != Some(0.0) {
            return Err(Error::InvalidArgument("trajectory must start at t = 0".into()));
        }
        if segments.windows(2).any(|w| !(w[1].start > w[0].start)) {
            return Err(Error::InvalidArgument("trajectory segments must be increasing".into()));
        }
        Ok(FieldTrajectory { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    fn segment_index(&self, t: f64) -> usize {
        self.segments.partition_point(|s| s.start <= t).saturating_sub(1)
    }

    pub fn offset_at(&self, t: f64) -> f64 {
        let s = &self.segments[self.segment_index(t)];
        s.offset + s.slope * (t - s.start)
    }

    pub fn is_zero(&self) -> bool {
        self.segments.iter().all(|s| s.offset == 0.0 && s.slope == 0.0)
    }

    /// Exact integrals over [t0, t1] of δB(t) and of (b0 + δB(t))².
    pub fn integrals(&self, t0: f64, t1: f64, b0: f64) -> (f64, f64) {
        let mut lin = 0.0;
        let mut quad = 0.0;
        let mut i = self.segment_index(t0);
        let mut a = t0;
        while a < t1 {
            let seg = &self.segments[i];
            let end = self.segments.get(i + 1).map_or(t1, |n| n.start.min(t1));
            let dt = end - a;
            let x0 = seg.offset + seg.slope * (a - seg.start);
            let x1 = seg.offset + seg.slope * (end - seg.start);
            lin += dt * (x0 + x1) / 2.0;
            let (y0, y1) = (b0 + x0, b0 + x1);
            quad += dt * (y0 * y0 + y0 * y1 + y1 * y1) / 3.0;
            a = end;
            i += 1;
        }
        (lin, quad)
    }
}

/// Draws one field-offset history spanning `duration`.
pub fn sample_noise_trajectory(model: &NoiseModel, duration: f64, rng_seed: u64) -> Result<FieldTrajectory> {
    if !(duration >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative duration {duration}")));
    }
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    match model.kind {
        NoiseKind::None => Ok(FieldTrajectory::zero()),
        NoiseKind::QuasiStatic => {
            let normal = Normal::new(0.0, model.sigma_b).expect("sigma validated");
            Ok(FieldTrajectory::constant(normal.sample(&mut rng)))
        }
        NoiseKind::RandomWalk => {
            let step = Normal::new(0.0, model.drift_rate_sigma * model.step_dt.sqrt()).expect("sigma validated");
            let n = (duration / model.step_dt).ceil().max(1.0) as usize;
            let mut level = 0.0;
            let segments = (0..n)
                .map(|k| {
                    if k > 0 {
                        level += step.sample(&mut rng);
                    }
                    Segment { start: k as f64 * model.step_dt, offset: level, slope: 0.0 }
                })
                .collect();
            FieldTrajectory::from_segments(segments)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::BOHR_MAGNETON_HZ_PER_T;

    #[test]
    fn silent_model_is_zero() {
        let t = sample_noise_trajectory(&NoiseModel::none(), 1e-3, 7).unwrap();
        assert!(t.is_zero());
        assert_eq!(t.offset_at(5e-4), 0.0);
    }

    #[test]
    fn negative_duration_rejected() {
        assert!(sample_noise_trajectory(&NoiseModel::none(), -1.0, 0).is_err());
    }

    #[test]
    fn quasi_static_spread() {
        let sigma_hz = 1000.0;
        let sigma_b = sigma_hz / (1.2 * BOHR_MAGNETON_HZ_PER_T);
        let model = NoiseModel::quasi_static(sigma_b);
        let draws: Vec<f64> = (0..10_000)
            .map(|seed| {
                let t = sample_noise_trajectory(&model, 4e-3, seed).unwrap();
                1.2 * BOHR_MAGNETON_HZ_PER_T * t.offset_at(0.0)
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((var.sqrt() / sigma_hz - 1.0).abs() < 0.05, "{}", var.sqrt());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let model = NoiseModel { kind: NoiseKind::RandomWalk, sigma_b: 0.0, drift_rate_sigma: 1e-6, step_dt: 1e-4 };
        let a = sample_noise_trajectory(&model, 4e-3, 99).unwrap();
        let b = sample_noise_trajectory(&model, 4e-3, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.segments().len(), 40);
        let c = sample_noise_trajectory(&model, 4e-3, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_walk_needs_step() {
        let model = NoiseModel { kind: NoiseKind::RandomWalk, step_dt: 0.0, ..NoiseModel::default() };
        assert!(sample_noise_trajectory(&model, 1e-3, 0).is_err());
    }

    #[test]
    fn integrals_are_exact() {
        let t = FieldTrajectory::from_segments(vec![
            Segment { start: 0.0, offset: 1.0, slope: 0.0 },
            Segment { start: 1.0, offset: 2.0, slope: 1.0 },
        ])
        .unwrap();
        let (lin, quad) = t.integrals(0.5, 2.0, 0.0);
        // 0.5·1 + ∫₀¹ (2+s) ds = 0.5 + 2.5
        assert!((lin - 3.0).abs() < 1e-14);
        // 0.5·1 + ∫₀¹ (2+s)² ds = 0.5 + 19/3
        assert!((quad - (0.5 + 19.0 / 3.0)).abs() < 1e-13);
        assert_eq!(t.integrals(1.0, 1.0, 3.0), (0.0, 0.0));
    }
}
