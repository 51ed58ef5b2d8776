//! Built-in scenarios, end-to-end analysis of a campaign, and the
//! plot-ready tables derived from it.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::atom::{IonModel, IonSpecies};
use crate::constants::BOHR_MAGNETON_HZ_PER_T;
use crate::error::{Error, Result};
use crate::estimator::{
    angle_slopes, content_digest, fit_cell_phases, fit_phase_vs_time, joint_fit_quadrupole, model_phase,
    theta_comparison_report, two_stage_fit, AngleSlope, CellCounts, CellPhase, ComparisonReport, JointFitOptions,
    JointFitResult, PhaseTimePoint, TwoStageResult,
};
use crate::noise::NoiseModel;
use crate::sampler::{run_campaign, CampaignDataset, CampaignPlan};
use crate::sequence::apply_rf_pulse;
use crate::state::{Level, StateVector};

/// True Θ of the built-in scenario, e·a₀².
pub const SCENARIO_THETA: f64 = 2.973;
/// Base-angle offset of the built-in scenario, rad.
pub const SCENARIO_BETA0: f64 = 0.1;
/// Zeeman noise of the built-in scenario, Hz (on adjacent D sublevels).
pub const SCENARIO_ZEEMAN_NOISE_HZ: f64 = 1e3;

/// Field offset whose adjacent-sublevel Zeeman shift in D is `hz`.
pub fn field_for_zeeman_hz(hz: f64, species: &IonSpecies) -> f64 {
    hz / (species.g_d * BOHR_MAGNETON_HZ_PER_T)
}

pub fn paper_model() -> IonModel {
    let mut m = IonModel { theta: SCENARIO_THETA, ..IonModel::default() };
    m.field.b = 3e-4;
    m.field.beta0 = SCENARIO_BETA0;
    m
}

pub fn paper_noise(species: &IonSpecies) -> NoiseModel {
    NoiseModel::quasi_static(field_for_zeeman_hz(SCENARIO_ZEEMAN_NOISE_HZ, species))
}

/// Seven nominal angles over [0, π/2] at three gradients, 4 ms total
/// precession, 300 shots at each of 12 laser phases.
pub fn paper_angle_plan() -> CampaignPlan {
    CampaignPlan {
        betas: (0..7).map(|k| k as f64 * FRAC_PI_2 / 6.0).collect(),
        gradients: vec![0.5e8, 1.0e8, 1.5e8],
        tau_totals: vec![4e-3],
        n_echo: 8,
        shots_per_point: 300,
        phi_points: 12,
        ..CampaignPlan::default()
    }
}

/// One angle, three gradients, total precession 1–4 ms.
pub fn paper_time_plan() -> CampaignPlan {
    CampaignPlan {
        betas: vec![std::f64::consts::FRAC_PI_4],
        tau_totals: vec![1e-3, 2e-3, 3e-3, 4e-3],
        ..paper_angle_plan()
    }
}

/// Linear fit of phase against total precession time for one (angle, gradient).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeFitRow {
    pub beta_nominal: f64,
    pub dez_dz: f64,
    pub frequency_hz: f64,
    pub ci95_hz: (f64, f64),
    /// rad
    pub intercept: f64,
    pub intercept_sigma: f64,
    pub reduced_chi2: f64,
}

/// Everything derived from one campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignAnalysis {
    /// Digest of the counts that were analysed.
    pub input_digest: String,
    pub phases: Vec<CellPhase>,
    pub time_fits: Vec<TimeFitRow>,
    pub gradient_fits: Vec<AngleSlope>,
    pub joint: Option<JointFitResult>,
    pub two_stage: Option<TwoStageResult>,
    pub report: Option<ComparisonReport>,
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<u64> = values.map(f64::to_bits).collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// Fits every fringe, then runs the time, gradient and angular fits that the
/// campaign layout supports. The joint fit runs whenever two or more angles
/// were measured.
pub fn analyze_campaign(
    cells: &[CellCounts],
    options: &JointFitOptions,
    species: &IonSpecies,
) -> Result<CampaignAnalysis> {
    if cells.is_empty() {
        return Err(Error::Dataset("campaign has no cells".into()));
    }
    let digest_input: Vec<_> = cells
        .iter()
        .map(|c| (c.beta_nominal, c.dez_dz, c.tau_total, c.n_echo, &c.fringe, &c.reference_fringe))
        .collect();
    let input_digest = content_digest(&digest_input)?;
    let phases = fit_cell_phases(cells)?;
    let points: Vec<_> = phases.iter().map(|c| c.point).collect();

    let mut by_pair: BTreeMap<(u64, u64), Vec<PhaseTimePoint>> = BTreeMap::new();
    for p in &points {
        by_pair.entry((p.beta_nominal.to_bits(), p.dez_dz.to_bits())).or_default().push(PhaseTimePoint {
            tau_total: p.tau_total,
            phase: p.phase,
            sigma: p.sigma,
        });
    }
    let mut time_fits = Vec::new();
    for ((b, g), pts) in &by_pair {
        if distinct(pts.iter().map(|p| p.tau_total)) < 2 {
            continue;
        }
        let fit = fit_phase_vs_time(pts)?;
        time_fits.push(TimeFitRow {
            beta_nominal: f64::from_bits(*b),
            dez_dz: f64::from_bits(*g),
            frequency_hz: fit.slope_hz,
            ci95_hz: fit.ci95_hz,
            intercept: fit.line.intercept,
            intercept_sigma: fit.line.intercept_sigma,
            reduced_chi2: if fit.line.dof > 0 { fit.line.reduced_chi2() } else { f64::NAN },
        });
    }

    let gradient_fits = angle_slopes(&points)?;
    let multi_angle = distinct(points.iter().map(|p| p.beta_nominal)) >= 2;
    let (joint, two_stage) = if multi_angle {
        (Some(joint_fit_quadrupole(&points, options)?), Some(two_stage_fit(&points, options)?))
    } else {
        (None, None)
    };
    let report = joint.as_ref().map(|j| theta_comparison_report(j, species));
    Ok(CampaignAnalysis { input_digest, phases, time_fits, gradient_fits, joint, two_stage, report })
}

/// Output of the built-in reference scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRun {
    pub theta_true: f64,
    pub angle_scan: CampaignAnalysis,
    pub time_scan: CampaignAnalysis,
    /// Θ̂ − Θ_true
    pub deviation_from_truth: f64,
    pub truth_covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaperScenario {
    pub model: IonModel,
    pub noise: NoiseModel,
    pub angle_plan: CampaignPlan,
    pub time_plan: CampaignPlan,
    pub fit: JointFitOptions,
}

impl Default for PaperScenario {
    fn default() -> Self {
        let model = paper_model();
        PaperScenario {
            noise: paper_noise(&model.species),
            model,
            angle_plan: paper_angle_plan(),
            time_plan: paper_time_plan(),
            fit: JointFitOptions::default(),
        }
    }
}

impl PaperScenario {
    /// The same scenario with every noise source removed and exact
    /// probabilities in place of sampled counts.
    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseModel::none();
        self.angle_plan.exact = true;
        self.time_plan.exact = true;
        self.model.field.beta_calibration_sigma = 0.0;
        self
    }

    /// Simulates both campaigns. The time scan uses a seed derived from `seed`.
    pub fn simulate(&self, seed: u64) -> Result<(CampaignDataset, CampaignDataset)> {
        let angle = run_campaign(&self.angle_plan, &self.model, &self.noise, seed)?;
        let time = run_campaign(&self.time_plan, &self.model, &self.noise, crate::sampler::substream_seed(seed, &[1]))?;
        Ok((angle, time))
    }

    pub fn run(&self, seed: u64) -> Result<PaperRun> {
        let (angle, time) = self.simulate(seed)?;
        self.analyze(&angle, &time)
    }

    /// Analyses simulated (or loaded) angle and time scans.
    pub fn analyze(&self, angle: &CampaignDataset, time: &CampaignDataset) -> Result<PaperRun> {
        let angle_scan = analyze_campaign(&CellCounts::from_campaign(angle), &self.fit, &self.model.species)?;
        let time_scan = analyze_campaign(&CellCounts::from_campaign(time), &self.fit, &self.model.species)?;
        let joint =
            angle_scan.joint.as_ref().ok_or_else(|| Error::NonIdentifiable("angle scan has one angle".into()))?;
        Ok(PaperRun {
            theta_true: self.model.theta,
            deviation_from_truth: joint.theta - self.model.theta,
            truth_covered: joint.ci95_theta.0 <= self.model.theta && self.model.theta <= joint.ci95_theta.1,
            angle_scan,
            time_scan,
        })
    }
}

/// Populations of the six D sublevels after one RF pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiRow {
    /// "m-5/2" or "psi_i"
    pub initial: String,
    pub area: f64,
    /// m = −5/2 … +5/2
    pub populations: [f64; 6],
}

/// RF Rabi scan on the D manifold from |−5/2⟩ and from the probe superposition.
pub fn rabi_scan(areas: &[f64], rf_phase: f64) -> Result<Vec<RabiRow>> {
    let starts = [("m-5/2", StateVector::basis(Level::d(-5)?)), ("psi_i", StateVector::probe_superposition())];
    let mut rows = Vec::with_capacity(2 * areas.len());
    for (label, state) in &starts {
        for &area in areas {
            let out = apply_rf_pulse(state, area, rf_phase)?;
            rows.push(RabiRow { initial: (*label).into(), area, populations: out.d_populations() });
        }
    }
    Ok(rows)
}

/// `n` equally spaced areas over [0, max].
pub fn area_grid(n: usize, max: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|k| max * k as f64 / (n - 1) as f64).collect(),
    }
}

pub const RABI_HEADER: [&str; 8] =
    ["initial", "area", "P_m-5/2", "P_m-3/2", "P_m-1/2", "P_m+1/2", "P_m+3/2", "P_m+5/2"];

fn num(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

fn table<W: Write>(out: W, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rabi_csv<W: Write>(rows: &[RabiRow], out: W) -> Result<()> {
    table(
        out,
        &RABI_HEADER,
        rows.iter().map(|r| {
            let mut v = vec![r.initial.clone(), num(r.area)];
            v.extend(r.populations.iter().map(|p| num(*p)));
            v
        }),
    )
}

pub const PHASE_TIME_HEADER: [&str; 6] = ["beta_nominal", "dEz_dz", "tau_total", "phase", "sigma", "phase_fit"];

/// Phase against total precession time with the per-gradient line.
pub fn write_phase_vs_time_csv<W: Write>(analysis: &CampaignAnalysis, out: W) -> Result<()> {
    let line = |b: f64, g: f64, t: f64| {
        analysis
            .time_fits
            .iter()
            .find(|f| f.beta_nominal == b && f.dez_dz == g)
            .map_or(f64::NAN, |f| f.intercept + std::f64::consts::TAU * f.frequency_hz * t)
    };
    let mut cells: Vec<&CellPhase> = analysis.phases.iter().collect();
    cells.sort_by(|a, b| {
        (a.point.beta_nominal, a.point.dez_dz, a.point.tau_total)
            .partial_cmp(&(b.point.beta_nominal, b.point.dez_dz, b.point.tau_total))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    table(
        out,
        &PHASE_TIME_HEADER,
        cells.into_iter().map(|c| {
            let p = c.point;
            vec![
                num(p.beta_nominal),
                num(p.dez_dz),
                num(p.tau_total),
                num(p.phase),
                num(p.sigma),
                num(line(p.beta_nominal, p.dez_dz, p.tau_total)),
            ]
        }),
    )
}

pub const FREQUENCY_GRADIENT_HEADER: [&str; 5] = ["beta_nominal", "dEz_dz", "frequency", "sigma", "frequency_fit"];

/// Frequency against gradient with the per-angle line.
pub fn write_frequency_vs_gradient_csv<W: Write>(analysis: &CampaignAnalysis, out: W) -> Result<()> {
    table(
        out,
        &FREQUENCY_GRADIENT_HEADER,
        analysis.gradient_fits.iter().flat_map(|a| {
            a.frequencies.iter().map(move |f| {
                vec![
                    num(a.beta_nominal),
                    num(f.dez_dz),
                    num(f.frequency),
                    num(f.sigma),
                    num(a.intercept + a.slope * f.dez_dz),
                ]
            })
        }),
    )
}

pub const PHASE_BETA_HEADER: [&str; 6] = ["beta_nominal", "dEz_dz", "tau_total", "phase", "sigma", "phase_model"];

/// Phase against nominal angle with the joint-fit model, offsets included.
pub fn write_phase_vs_beta_csv<W: Write>(analysis: &CampaignAnalysis, options: &JointFitOptions, out: W) -> Result<()> {
    let model = |c: &CellPhase| -> f64 {
        let Some(j) = &analysis.joint else { return f64::NAN };
        let offset = j
            .per_angle_offsets
            .iter()
            .find(|o| o.beta_nominal == c.point.beta_nominal && o.tau_total == c.point.tau_total)
            .map_or(0.0, |o| o.offset);
        model_phase(&c.point, j.theta, j.beta0, j.epsilon1, options.alpha) + offset
    };
    let mut cells: Vec<&CellPhase> = analysis.phases.iter().collect();
    cells.sort_by(|a, b| {
        (a.point.dez_dz, a.point.tau_total, a.point.beta_nominal)
            .partial_cmp(&(b.point.dez_dz, b.point.tau_total, b.point.beta_nominal))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    table(
        out,
        &PHASE_BETA_HEADER,
        cells.into_iter().map(|c| {
            let p = c.point;
            vec![num(p.beta_nominal), num(p.dez_dz), num(p.tau_total), num(p.phase), num(p.sigma), num(model(c))]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_field_is_one_kilohertz() {
        let s = IonSpecies::default();
        let b = field_for_zeeman_hz(1e3, &s);
        assert!((b / 5.954e-8 - 1.0).abs() < 1e-3, "{b}");
    }

    #[test]
    fn rabi_rows_cover_both_initial_states() {
        let rows = rabi_scan(&area_grid(5, std::f64::consts::PI), 0.0).unwrap();
        assert_eq!(rows.len(), 10);
        assert!((rows[0].populations[0] - 1.0).abs() < 1e-15);
        assert!((rows[4].populations[5] - 1.0).abs() < 1e-12);
        assert!((rows[5].populations[0] - 0.5).abs() < 1e-15 && (rows[5].populations[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grids() {
        assert_eq!(area_grid(3, 2.0), vec![0.0, 1.0, 2.0]);
        assert_eq!(paper_time_plan().tau_totals.len(), 4);
        assert_eq!(paper_angle_plan().betas.len(), 7);
    }
}
