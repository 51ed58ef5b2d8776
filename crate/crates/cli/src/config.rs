use std::path::{Path, PathBuf};

use ddquad::atom::{FieldConfig, IonModel, IonSpecies, TrapConfig};
use ddquad::estimator::JointFitOptions;
use ddquad::noise::NoiseModel;
use ddquad::sampler::CampaignPlan;
use ddquad::scenario::{paper_angle_plan, paper_model, paper_noise, paper_time_plan};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// e·a₀²
    pub theta: f64,
    pub second_order_zeeman: bool,
    /// rad/s; absent means instantaneous RF pulses
    pub rf_rabi_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RabiSection {
    pub points: usize,
    pub max_area: f64,
    pub rf_phase: f64,
}

impl Default for RabiSection {
    fn default() -> Self {
        RabiSection { points: 121, max_area: 4.0 * std::f64::consts::PI, rf_phase: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapSection {
    /// Zero disables the bootstrap.
    pub n_resamples: usize,
}

/// Complete, self-describing input of every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub ion: IonSpecies,
    pub model: ModelSection,
    pub trap: TrapConfig,
    pub field: FieldConfig,
    pub noise: NoiseModel,
    /// Campaign of `run-campaign`, angle scan of `reproduce-paper`, and the
    /// single fringe of `simulate-fringe` (first grid entries).
    pub plan: CampaignPlan,
    /// Precession-time scan of `reproduce-paper`.
    pub time_plan: CampaignPlan,
    pub fit: JointFitOptions,
    pub bootstrap: BootstrapSection,
    pub rabi: RabiSection,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = paper_model();
        ModelSection { theta: m.theta, second_order_zeeman: m.second_order_zeeman, rf_rabi_rate: m.rf_rabi_rate }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let m = paper_model();
        ScenarioConfig {
            seed: 1,
            output_dir: PathBuf::from("out"),
            noise: paper_noise(&m.species),
            ion: m.species,
            model: ModelSection::default(),
            trap: m.trap,
            field: m.field,
            plan: paper_angle_plan(),
            time_plan: paper_time_plan(),
            fit: JointFitOptions::default(),
            bootstrap: BootstrapSection::default(),
            rabi: RabiSection::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn ion_model(&self) -> IonModel {
        IonModel {
            species: self.ion.clone(),
            trap: self.trap.clone(),
            field: self.field.clone(),
            theta: self.model.theta,
            second_order_zeeman: self.model.second_order_zeeman,
            rf_rabi_rate: self.model.rf_rabi_rate,
        }
    }

    /// Reads `path` (or the defaults), then applies `key=value` overrides
    /// addressed by dotted paths such as `plan.shots_per_point=100`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                let parsed: ScenarioConfig = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
                toml::Value::try_from(parsed).map_err(|e| CliError::Config(e.to_string()))?
            }
            None => toml::Value::try_from(ScenarioConfig::default()).map_err(|e| CliError::Config(e.to_string()))?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        value.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    /// Rejects values no command could run with.
    pub fn validate(&self) -> Result<(), CliError> {
        let check = || -> ddquad::Result<()> {
            self.ion_model().validate()?;
            self.noise.validate()?;
            self.plan.validate()?;
            self.time_plan.validate()
        };
        check().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let new_value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}`: `{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert((*part).to_string(), new_value);
            return Ok(());
        }
        node = table.entry((*part).to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(CliError::Config("empty override key".into()))
}

/// A TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
