//! Projective detection, fringe scans and whole measurement campaigns.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atom::{FieldConfig, IonModel, TrapConfig};
use crate::error::{Error, Result};
use crate::noise::{sample_noise_trajectory, FieldTrajectory, NoiseModel};
use crate::sequence::{
    build_quadrupole_dd_sequence, optical_ground, parse_sequence_text, CompiledSequence, PulseSequence,
};
use crate::state::{StateVector, D_OFFSET, N_LEVELS};

/// Name of the scan variable bound to the analysis-pulse phase.
pub const PHI_VAR: &str = "phi_laser";
/// Name of the scan variable bound to the single-arm wait in sequence files.
pub const TAU_VAR: &str = "tau";

/// Misassignment probabilities of the fluorescence readout.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionModel {
    /// Probability that an ion shelved in D is read as bright.
    pub false_bright: f64,
    /// Probability that an ion in S is read as dark.
    pub false_dark: f64,
}

impl DetectionModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("false_bright", self.false_bright), ("false_dark", self.false_dark)] {
            if !(0.0..=0.5).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 0.5]")));
            }
        }
        Ok(())
    }

    /// Observed dark probability given the true D population.
    pub fn apply(&self, p_d: f64) -> f64 {
        p_d * (1.0 - self.false_bright) + (1.0 - p_d) * self.false_dark
    }
}

/// Probability that the ion is read out as dark (shelved in D).
pub fn measure_population_d(state: &StateVector, detection: &DetectionModel) -> f64 {
    let p: f64 = state.amplitudes()[D_OFFSET..N_LEVELS].iter().map(|a| a.norm_sqr()).sum();
    detection.apply(p.clamp(0.0, 1.0))
}

/// One Bernoulli trial. Probabilities within 1e-12 outside [0, 1] are clamped.
pub fn sample_shot<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<bool> {
    if !(-1e-12..=1.0 + 1e-12).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    Ok(rng.random_bool(p.clamp(0.0, 1.0)))
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of an independent substream labelled by `path`.
pub fn substream_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// `n` equally spaced phases over [0, 2π).
pub fn default_phi_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| TAU * k as f64 / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub phi_laser: f64,
    pub n_shots: u32,
    /// Dark count. Integral when sampled; the expected count in exact mode.
    pub k_d: f64,
}

/// Where and how a fringe was recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeContext {
    pub n_echo: usize,
    /// Single-arm wait, s.
    pub tau: f64,
    pub trap: TrapConfig,
    /// Field snapshot; `beta` is the physical angle used in the dynamics.
    pub field: FieldConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeDataset {
    pub points: Vec<FringePoint>,
    pub context: FringeContext,
    /// Counts are expectations rather than samples.
    pub exact: bool,
}

impl FringeDataset {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Dataset("fringe has no points".into()));
        }
        for p in &self.points {
            if !(0.0..TAU).contains(&p.phi_laser) {
                return Err(Error::Dataset(format!("phi_laser {} outside [0, 2π)", p.phi_laser)));
            }
            if p.n_shots == 0 || !(0.0..=p.n_shots as f64).contains(&p.k_d) {
                return Err(Error::Dataset(format!("count {} of {} shots", p.k_d, p.n_shots)));
            }
            if !self.exact && p.k_d.fract() != 0.0 {
                return Err(Error::Dataset(format!("non-integral count {} in sampled data", p.k_d)));
            }
        }
        if self.points.windows(2).any(|w| !(w[1].phi_laser > w[0].phi_laser)) {
            return Err(Error::Dataset("phi_laser grid must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// How each fringe is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    pub phi_grid: Vec<f64>,
    pub shots_per_point: u32,
    /// Emit expected counts instead of Bernoulli samples.
    pub exact: bool,
    pub detection: DetectionModel,
}

impl ScanSettings {
    pub fn new(points: usize, shots_per_point: u32) -> Self {
        ScanSettings {
            phi_grid: default_phi_grid(points),
            shots_per_point,
            exact: false,
            detection: DetectionModel::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.phi_grid.is_empty() || self.shots_per_point == 0 {
            return Err(Error::InvalidArgument("need at least one phase point and one shot".into()));
        }
        self.detection.validate()
    }
}

/// Samples a fringe of `template`, whose analysis phase must be the scan
/// variable `$phi_laser`; `phase_shift` is subtracted from every bound phase.
pub fn run_fringe_scan_sequence(
    template: &PulseSequence,
    context: FringeContext,
    model: &IonModel,
    noise: &NoiseModel,
    settings: &ScanSettings,
    phase_shift: f64,
    rng_seed: u64,
) -> Result<FringeDataset> {
    settings.validate()?;
    noise.validate()?;
    if !template.variables().contains(PHI_VAR) {
        return Err(Error::Sequence(format!("sequence does not use ${PHI_VAR}")));
    }
    let initial = StateVector::basis(template.initial);
    let silent = noise.is_silent();
    let mut points = Vec::with_capacity(settings.phi_grid.len());
    for (ip, &phi) in settings.phi_grid.iter().enumerate() {
        let compiled = CompiledSequence::new(&template.bind(PHI_VAR, phi - phase_shift), model)?;
        let n = settings.shots_per_point;
        let noiseless_p = silent
            .then(|| measure_population_d(&compiled.run(&initial, &FieldTrajectory::zero()), &settings.detection));
        let k_d = if settings.exact {
            match noiseless_p {
                Some(p) => n as f64 * p,
                None => (0..n)
                    .map(|shot| {
                        let traj = sample_noise_trajectory(
                            noise,
                            compiled.duration(),
                            substream_seed(rng_seed, &[ip as u64, shot as u64, 0]),
                        )?;
                        Ok(measure_population_d(&compiled.run(&initial, &traj), &settings.detection))
                    })
                    .sum::<Result<f64>>()?,
            }
        } else {
            let mut k = 0u32;
            for shot in 0..n {
                let p = match noiseless_p {
                    Some(p) => p,
                    None => {
                        let traj = sample_noise_trajectory(
                            noise,
                            compiled.duration(),
                            substream_seed(rng_seed, &[ip as u64, shot as u64, 0]),
                        )?;
                        measure_population_d(&compiled.run(&initial, &traj), &settings.detection)
                    }
                };
                let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(rng_seed, &[ip as u64, shot as u64, 1]));
                k += sample_shot(p, &mut rng)? as u32;
            }
            k as f64
        };
        points.push(FringePoint { phi_laser: phi, n_shots: n, k_d });
    }
    let data = FringeDataset { points, context, exact: settings.exact };
    data.validate()?;
    Ok(data)
}

/// Samples a fringe of the standard echo sequence.
pub fn run_fringe_scan(
    n_echo: usize,
    tau: f64,
    model: &IonModel,
    noise: &NoiseModel,
    settings: &ScanSettings,
    rng_seed: u64,
) -> Result<FringeDataset> {
    let template = dd_template(n_echo, tau)?;
    let context = FringeContext { n_echo, tau, trap: model.trap.clone(), field: model.field.clone() };
    run_fringe_scan_sequence(&template, context, model, noise, settings, 0.0, rng_seed)
}

fn dd_template(n_echo: usize, tau: f64) -> Result<PulseSequence> {
    let mut seq = build_quadrupole_dd_sequence(n_echo, tau, 0.0)?;
    let last_pulse = seq.elements.len() - 2;
    if let crate::sequence::SequenceElement::OpticalPulse { laser_phase, .. } = &mut seq.elements[last_pulse] {
        *laser_phase = crate::sequence::Param::Var(PHI_VAR.into());
    }
    Ok(seq)
}

/// The grids and sampling options of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignPlan {
    /// Nominal angles, rad.
    pub betas: Vec<f64>,
    /// Field gradients, V/m².
    pub gradients: Vec<f64>,
    /// Total free-precession times 2·n·τ, s.
    pub tau_totals: Vec<f64>,
    pub n_echo: usize,
    pub shots_per_point: u32,
    pub phi_points: usize,
    pub exact: bool,
    pub detection: DetectionModel,
    /// Constant added to the signal phase at each angle, rad. Empty means none.
    pub angle_phase_offsets: Vec<f64>,
    /// Optional sequence program using `$tau` and `$phi_laser`.
    pub sequence_text: Option<String>,
}

impl Default for CampaignPlan {
    fn default() -> Self {
        CampaignPlan {
            betas: vec![std::f64::consts::FRAC_PI_4],
            gradients: vec![1e8],
            tau_totals: vec![4e-3],
            n_echo: 8,
            shots_per_point: 300,
            phi_points: 12,
            exact: false,
            detection: DetectionModel::default(),
            angle_phase_offsets: Vec::new(),
            sequence_text: None,
        }
    }
}

impl CampaignPlan {
    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.gradients.is_empty() || self.tau_totals.is_empty() {
            return Err(Error::InvalidArgument("campaign grids must be non-empty".into()));
        }
        if self.n_echo < 2 || !self.n_echo.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("n_echo must be even and >= 2, got {}", self.n_echo)));
        }
        if self.phi_points < 3 || self.shots_per_point == 0 {
            return Err(Error::InvalidArgument("need >= 3 phase points and >= 1 shot".into()));
        }
        if !self.angle_phase_offsets.is_empty() && self.angle_phase_offsets.len() != self.betas.len() {
            return Err(Error::InvalidArgument("angle_phase_offsets must match betas in length".into()));
        }
        if self.tau_totals.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidArgument("tau_totals must be finite and >= 0".into()));
        }
        self.detection.validate()
    }

    fn settings(&self) -> ScanSettings {
        ScanSettings {
            phi_grid: default_phi_grid(self.phi_points),
            shots_per_point: self.shots_per_point,
            exact: self.exact,
            detection: self.detection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignCell {
    pub beta_nominal: f64,
    pub dez_dz: f64,
    pub tau_total: f64,
    pub fringe: FringeDataset,
    /// The same sequence with τ = 0.
    pub reference_fringe: FringeDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignDataset {
    pub plan: CampaignPlan,
    pub model: IonModel,
    pub noise: NoiseModel,
    pub seed: u64,
    pub cells: Vec<CampaignCell>,
}

/// Physical angles after the base offset and per-angle calibration error.
pub fn physical_betas(plan: &CampaignPlan, field: &FieldConfig, seed: u64) -> Vec<f64> {
    let normal = Normal::new(0.0, field.beta_calibration_sigma).ok();
    plan.betas
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let err = match (&normal, field.beta_calibration_sigma > 0.0) {
                (Some(n), true) => {
                    n.sample(&mut ChaCha8Rng::seed_from_u64(substream_seed(seed, &[u64::MAX, k as u64])))
                }
                _ => 0.0,
            };
            b + field.beta0 + err
        })
        .collect()
}

/// Runs every (β, gradient, τ_total) cell with its τ = 0 reference. Cells are
/// simulated in parallel on independent substreams.
pub fn run_campaign(plan: &CampaignPlan, model: &IonModel, noise: &NoiseModel, seed: u64) -> Result<CampaignDataset> {
    plan.validate()?;
    model.validate()?;
    noise.validate()?;
    let custom = plan.sequence_text.as_deref().map(parse_sequence_text).transpose()?;
    if let Some(seq) = &custom {
        if seq.initial != optical_ground() {
            return Err(Error::Sequence("campaign sequences must start in S:-1/2".into()));
        }
    }
    let betas = physical_betas(plan, &model.field, seed);
    let settings = plan.settings();
    let mut jobs = Vec::new();
    for (ib, &beta_nominal) in plan.betas.iter().enumerate() {
        for (ig, &grad) in plan.gradients.iter().enumerate() {
            for (it, &tau_total) in plan.tau_totals.iter().enumerate() {
                jobs.push((ib, ig, it, beta_nominal, grad, tau_total));
            }
        }
    }
    let cells = jobs
        .par_iter()
        .map(|&(ib, ig, it, beta_nominal, grad, tau_total)| {
            let mut cell_model = model.clone();
            cell_model.trap.dez_dz = grad;
            cell_model.field.beta = betas[ib];
            let offset = plan.angle_phase_offsets.get(ib).copied().unwrap_or(0.0);
            let tau = tau_total / (2 * plan.n_echo) as f64;
            let run = |tau: f64, role: u64, shift: f64| -> Result<FringeDataset> {
                let template = match &custom {
                    Some(seq) => seq.bind(TAU_VAR, tau),
                    None => dd_template(plan.n_echo, tau)?,
                };
                let context = FringeContext {
                    n_echo: plan.n_echo,
                    tau,
                    trap: cell_model.trap.clone(),
                    field: cell_model.field.clone(),
                };
                let seed = substream_seed(seed, &[ib as u64, ig as u64, it as u64, role]);
                run_fringe_scan_sequence(&template, context, &cell_model, noise, &settings, shift, seed)
            };
            Ok(CampaignCell {
                beta_nominal,
                dez_dz: grad,
                tau_total,
                fringe: run(tau, 0, offset)?,
                reference_fringe: run(0.0, 1, 0.0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CampaignDataset { plan: plan.clone(), model: model.clone(), noise: noise.clone(), seed, cells })
}

/// Column order of the campaign CSV.
pub const CSV_HEADER: [&str; 8] =
    ["beta_nominal", "dEz_dz", "tau_total", "n_echo", "phi_laser", "n_shots", "k_D", "is_reference"];

/// Writes one row per fringe point, signal before reference within a cell.
/// Floats use the shortest representation that parses back to the same bits.
pub fn write_campaign_csv<W: Write>(data: &CampaignDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for cell in &data.cells {
        for (fringe, is_ref) in [(&cell.fringe, 0), (&cell.reference_fringe, 1)] {
            for p in &fringe.points {
                w.write_record([
                    cell.beta_nominal.to_string(),
                    cell.dez_dz.to_string(),
                    cell.tau_total.to_string(),
                    fringe.context.n_echo.to_string(),
                    p.phi_laser.to_string(),
                    p.n_shots.to_string(),
                    p.k_d.to_string(),
                    is_ref.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    beta_nominal: f64,
    #[serde(rename = "dEz_dz")]
    dez_dz: f64,
    tau_total: f64,
    n_echo: usize,
    phi_laser: f64,
    n_shots: u32,
    #[serde(rename = "k_D")]
    k_d: f64,
    is_reference: u8,
}

/// A cell recovered from CSV. Physical context beyond the columns is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvCell {
    pub beta_nominal: f64,
    pub dez_dz: f64,
    pub tau_total: f64,
    pub n_echo: usize,
    pub fringe: Vec<FringePoint>,
    pub reference_fringe: Vec<FringePoint>,
}

/// Reads the campaign CSV; lines starting with `#` are skipped.
pub fn read_campaign_csv<R: Read>(input: R) -> Result<Vec<CsvCell>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::Dataset(format!("unexpected CSV header {headers:?}")));
    }
    let mut cells: Vec<CsvCell> = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row?;
        let point = FringePoint { phi_laser: row.phi_laser, n_shots: row.n_shots, k_d: row.k_d };
        let key = (row.beta_nominal, row.dez_dz, row.tau_total, row.n_echo);
        let cell = match cells.last_mut() {
            Some(c) if (c.beta_nominal, c.dez_dz, c.tau_total, c.n_echo) == key => c,
            _ => {
                cells.push(CsvCell {
                    beta_nominal: row.beta_nominal,
                    dez_dz: row.dez_dz,
                    tau_total: row.tau_total,
                    n_echo: row.n_echo,
                    fringe: Vec::new(),
                    reference_fringe: Vec::new(),
                });
                cells.last_mut().unwrap()
            }
        };
        match row.is_reference {
            0 => cell.fringe.push(point),
            1 => cell.reference_fringe.push(point),
            v => return Err(Error::Dataset(format!("is_reference must be 0 or 1, got {v}"))),
        }
    }
    if cells.iter().any(|c| c.fringe.is_empty() || c.reference_fringe.is_empty()) {
        return Err(Error::Dataset("every cell needs signal and reference rows".into()));
    }
    Ok(cells)
}
