use std::fmt;

use serde::{Deserialize, Serialize};

use super::JointFitResult;
use crate::atom::{IonSpecies, ReferenceKind};
use crate::constants::Z_95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub kind: ReferenceKind,
    /// e·a₀²
    pub value: f64,
    pub sigma: f64,
    /// Θ̂ − value, e·a₀²
    pub difference: f64,
    /// Difference in units of the combined standard deviation.
    pub deviation_sigma: f64,
}

/// Measured Θ against stored reference values, sorted by |deviation|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub theta: f64,
    pub ci95: (f64, f64),
    pub rows: Vec<ComparisonRow>,
}

/// Compares the fitted Θ with every reference of `species`.
///
/// The combined σ adds the reference σ in quadrature to the half of the 95 %
/// interval lying toward the reference, divided by 1.96.
pub fn theta_comparison_report(result: &JointFitResult, species: &IonSpecies) -> ComparisonReport {
    let theta = result.theta;
    let (lo, hi) = result.ci95_theta;
    let mut rows: Vec<ComparisonRow> = species
        .reference_theta_values
        .iter()
        .map(|r| {
            let difference = theta - r.value;
            let side = if r.value >= theta { hi - theta } else { theta - lo };
            let combined = r.sigma.hypot(side / Z_95);
            let deviation_sigma = if difference == 0.0 {
                0.0
            } else if combined > 0.0 {
                difference / combined
            } else {
                f64::INFINITY.copysign(difference)
            };
            ComparisonRow {
                label: r.label.clone(),
                kind: r.kind,
                value: r.value,
                sigma: r.sigma,
                difference,
                deviation_sigma,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.deviation_sigma.abs().total_cmp(&b.deviation_sigma.abs()));
    ComparisonReport { theta, ci95: (lo, hi), rows }
}

impl ComparisonRow {
    /// Deviation written as e.g. "1.2σ".
    pub fn deviation_text(&self) -> String {
        format!("{:.1}σ", self.deviation_sigma.abs())
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Θ = {:.3} e·a₀²  (95% CI {:.3} .. {:.3})", self.theta, self.ci95.0, self.ci95.1)?;
        for r in &self.rows {
            let kind = match r.kind {
                ReferenceKind::Measurement => "measurement",
                ReferenceKind::Theory => "theory",
            };
            let value = if r.sigma > 0.0 { format!("{}({})", r.value, r.sigma) } else { format!("{}", r.value) };
            writeln!(f, "  {:<11} {:<14} {:>6}  {}", kind, value, r.deviation_text(), r.label)?;
        }
        Ok(())
    }
}
