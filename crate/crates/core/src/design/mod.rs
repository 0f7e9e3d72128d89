//! Sample-size determination and allocation-ratio optimisation.

mod allocation;
mod resolve;
mod search;

use serde::{Deserialize, Serialize};

pub use allocation::{criterion_value, effect_covariance, optimal_ratios, Criterion};
pub use resolve::{
    design_curves, evaluate_design, resolve_design, runtime_warnings, simulate_design, DesignReport,
    ScenarioResult,
    SimulationReport, SimulationRow, Warning,
};
pub use search::{
    design_thresholds, power_at, required_sample_size, resolve_ratios, PowerEvaluator, N0_LIMIT,
};

use crate::corrections::ThresholdSet;
use crate::outcome::SampleSizes;
use crate::scenario::DesignScenario;

/// Which power the sample size must deliver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerGoal {
    /// Reject every null under H_A.
    ConjunctiveHa,
    /// Reject at least one null under H_A.
    DisjunctiveHa,
    /// Reject H_k under LFC_k, for every k.
    MinMarginalLfc,
}

impl PowerGoal {
    pub fn id(self) -> &'static str {
        match self {
            PowerGoal::ConjunctiveHa => "conjunctive_ha",
            PowerGoal::DisjunctiveHa => "disjunctive_ha",
            PowerGoal::MinMarginalLfc => "min_marginal_lfc",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            PowerGoal::ConjunctiveHa => "conjunctive power under H_A",
            PowerGoal::DisjunctiveHa => "disjunctive power under H_A",
            PowerGoal::MinMarginalLfc => "minimal marginal power under the LFCs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AllocationDoc", into = "AllocationDoc")]
pub enum Allocation {
    /// Ratios r₁..r_K of experimental to control patients.
    Fixed { ratios: Vec<f64> },
    AOptimal,
    DOptimal,
    EOptimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum AllocationType {
    Fixed,
    AOptimal,
    DOptimal,
    EOptimal,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AllocationDoc {
    #[serde(rename = "type")]
    kind: AllocationType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ratios: Option<Vec<f64>>,
}

impl TryFrom<AllocationDoc> for Allocation {
    type Error = String;

    fn try_from(d: AllocationDoc) -> Result<Self, String> {
        match (d.kind, d.ratios) {
            (AllocationType::Fixed, Some(ratios)) => Ok(Self::Fixed { ratios }),
            (AllocationType::Fixed, None) => Err("a fixed allocation needs `ratios`".into()),
            (_, Some(_)) => Err("`ratios` only applies to a fixed allocation".into()),
            (AllocationType::AOptimal, None) => Ok(Self::AOptimal),
            (AllocationType::DOptimal, None) => Ok(Self::DOptimal),
            (AllocationType::EOptimal, None) => Ok(Self::EOptimal),
        }
    }
}

impl From<Allocation> for AllocationDoc {
    fn from(a: Allocation) -> Self {
        let (kind, ratios) = match a {
            Allocation::Fixed { ratios } => (AllocationType::Fixed, Some(ratios)),
            Allocation::AOptimal => (AllocationType::AOptimal, None),
            Allocation::DOptimal => (AllocationType::DOptimal, None),
            Allocation::EOptimal => (AllocationType::EOptimal, None),
        };
        Self { kind, ratios }
    }
}

impl Allocation {
    pub fn criterion(&self) -> Option<Criterion> {
        match self {
            Allocation::Fixed { .. } => None,
            Allocation::AOptimal => Some(Criterion::A),
            Allocation::DOptimal => Some(Criterion::D),
            Allocation::EOptimal => Some(Criterion::E),
        }
    }
}

/// A resolved design: sample sizes and the test that goes with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub scenario: DesignScenario,
    pub sizes: SampleSizes,
    /// n_k / n₀.
    pub ratios: Vec<f64>,
    pub thresholds: ThresholdSet,
    /// z-scale thresholds −Φ⁻¹(γ_k).
    pub critical_values: Vec<f64>,
    pub achieved_power: f64,
    pub total_n: f64,
    /// Control-arm size before any rounding.
    pub continuous_n0: f64,
}
