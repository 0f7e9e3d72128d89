//! The scenario document: every input needed to resolve a design.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corrections::Mcc;
use crate::design::{Allocation, PowerGoal};
use crate::error::{Error, FieldError, Result};
use crate::mvn::QmcSettings;
use crate::opchar::{DEFAULT_QUALITY, MAX_QUALITY, MIN_QUALITY};
use crate::outcome::{check_deltas, OutcomeKind, OutcomeModel, MAX_ARMS, PROPORTION_GUARD};

pub const SCENARIO_VERSION: u32 = 1;

/// Standard deviations: one shared value, or σ₀..σ_K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Common(f64),
    PerArm(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OutcomeDoc", into = "OutcomeDoc")]
pub enum OutcomeSpec {
    Normal { sigma: Sigma },
    Bernoulli { pi0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum OutcomeType {
    Normal,
    Bernoulli,
}

/// Flat wire form, so type errors inside `outcome` keep their key path.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutcomeDoc {
    #[serde(rename = "type")]
    kind: OutcomeType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<Sigma>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pi0: Option<f64>,
}

impl TryFrom<OutcomeDoc> for OutcomeSpec {
    type Error = String;

    fn try_from(d: OutcomeDoc) -> std::result::Result<Self, String> {
        match (d.kind, d.sigma, d.pi0) {
            (OutcomeType::Normal, Some(sigma), None) => Ok(Self::Normal { sigma }),
            (OutcomeType::Bernoulli, None, Some(pi0)) => Ok(Self::Bernoulli { pi0 }),
            (OutcomeType::Normal, _, _) => Err("a normal outcome takes `sigma` and no `pi0`".into()),
            (OutcomeType::Bernoulli, _, _) => Err("a bernoulli outcome takes `pi0` and no `sigma`".into()),
        }
    }
}

impl From<OutcomeSpec> for OutcomeDoc {
    fn from(s: OutcomeSpec) -> Self {
        match s {
            OutcomeSpec::Normal { sigma } => Self {
                kind: OutcomeType::Normal,
                sigma: Some(sigma),
                pi0: None,
            },
            OutcomeSpec::Bernoulli { pi0 } => Self {
                kind: OutcomeType::Bernoulli,
                sigma: None,
                pi0: Some(pi0),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSpec {
    pub enabled: bool,
    /// Number of θ values in the plot grid.
    pub quality: usize,
}

impl Default for PlotSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            quality: DEFAULT_QUALITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignScenario {
    pub version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub outcome: OutcomeSpec,
    pub alpha: f64,
    pub beta: f64,
    pub delta1: f64,
    pub delta0: f64,
    pub mcc: Mcc,
    pub power_goal: PowerGoal,
    pub allocation: Allocation,
    /// π₀..π_K assumed when optimising Bernoulli allocations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumed_pis: Option<Vec<f64>>,
    #[serde(default)]
    pub integer_n: bool,
    #[serde(default)]
    pub plot: PlotSpec,
    #[serde(default)]
    pub qmc: QmcSettings,
}

const TOP_KEYS: &[&str] = &[
    "version", "K", "outcome", "alpha", "beta", "delta1", "delta0", "mcc", "power_goal",
    "allocation", "assumed_pis", "integer_n", "plot", "qmc",
];
const NESTED_KEYS: &[(&str, &[&str])] = &[
    ("outcome", &["type", "sigma", "pi0"]),
    ("allocation", &["type", "ratios"]),
    ("plot", &["enabled", "quality"]),
    ("qmc", &["points_log2", "randomizations", "seed", "abs_tol"]),
];

impl DesignScenario {
    /// Two experimental arms, binary outcome with control response 0.3,
    /// δ₁ = 0.15, δ₀ = 0, α = 0.15, β = 0.2, Dunnett's correction, equal
    /// allocation, minimal marginal power under the LFCs.
    pub fn defaults() -> Self {
        Self {
            version: SCENARIO_VERSION,
            k: 2,
            outcome: OutcomeSpec::Bernoulli { pi0: 0.3 },
            alpha: 0.15,
            beta: 0.2,
            delta1: 0.15,
            delta0: 0.0,
            mcc: Mcc::Dunnett,
            power_goal: PowerGoal::MinMarginalLfc,
            allocation: Allocation::Fixed {
                ratios: vec![1.0, 1.0],
            },
            assumed_pis: None,
            integer_n: false,
            plot: PlotSpec::default(),
            qmc: QmcSettings::default(),
        }
    }

    /// Parses and validates a JSON scenario, reporting unknown keys and
    /// rule violations together with their key paths.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| {
            Error::Validation(vec![FieldError::new(
                "$",
                format!("malformed JSON at line {}, column {}: {e}", e.line(), e.column()),
            )])
        })?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let unknown = unknown_keys(&value);
        if !unknown.is_empty() {
            return Err(Error::Validation(unknown));
        }
        let scenario: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "$".to_string() } else { path };
            Error::Validation(vec![FieldError::new(field, e.into_inner().to_string())])
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn model(&self) -> Result<OutcomeModel> {
        let m = self.model_unchecked();
        m.validate()?;
        Ok(m)
    }

    fn model_unchecked(&self) -> OutcomeModel {
        let kind = match &self.outcome {
            OutcomeSpec::Normal { sigma } => OutcomeKind::Normal {
                sigma: match sigma {
                    Sigma::Common(s) => vec![*s; self.k + 1],
                    Sigma::PerArm(v) => v.clone(),
                },
            },
            OutcomeSpec::Bernoulli { pi0 } => OutcomeKind::Bernoulli { pi0: *pi0 },
        };
        OutcomeModel { k: self.k, kind }
    }

    /// Checks every rule and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.version != SCENARIO_VERSION {
            errs.push(FieldError::new(
                "version",
                format!("unsupported version {}, expected {SCENARIO_VERSION}", self.version),
            ));
        }
        let k_ok = (1..=MAX_ARMS).contains(&self.k);
        let model = self.model_unchecked();
        if let Err(Error::Validation(e)) = model.validate() {
            errs.extend(e);
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                errs.push(FieldError::new(name, "must lie strictly between 0 and 1"));
            }
        }
        if let Err(Error::Validation(e)) = check_deltas(&model, self.delta1, self.delta0) {
            errs.extend(e);
        }
        if let Allocation::Fixed { ratios } = &self.allocation {
            if k_ok && ratios.len() != self.k {
                errs.push(FieldError::new(
                    "allocation.ratios",
                    format!("expected {} ratios, got {}", self.k, ratios.len()),
                ));
            }
            for (i, r) in ratios.iter().enumerate() {
                if !(r.is_finite() && *r > 0.0) {
                    errs.push(FieldError::new(format!("allocation.ratios[{i}]"), "must be positive"));
                }
            }
        }
        let optimal = self.allocation.criterion().is_some();
        match (&self.assumed_pis, model.is_bernoulli() && optimal) {
            (None, true) => errs.push(FieldError::new(
                "assumed_pis",
                "optimal allocation for a binary outcome needs assumed response rates pi_0..pi_K",
            )),
            (Some(p), true) => {
                if k_ok && p.len() != self.k + 1 {
                    errs.push(FieldError::new(
                        "assumed_pis",
                        format!("expected {} rates, got {}", self.k + 1, p.len()),
                    ));
                }
                for (i, v) in p.iter().enumerate() {
                    if !(*v > PROPORTION_GUARD && *v < 1.0 - PROPORTION_GUARD) {
                        errs.push(FieldError::new(format!("assumed_pis[{i}]"), "must lie strictly inside (0, 1)"));
                    }
                }
            }
            (Some(_), false) => errs.push(FieldError::new(
                "assumed_pis",
                "only used for optimal allocation with a binary outcome",
            )),
            (None, false) => {}
        }
        if self.plot.enabled && !(MIN_QUALITY..=MAX_QUALITY).contains(&self.plot.quality) {
            errs.push(FieldError::new(
                "plot.quality",
                format!("must lie in [{MIN_QUALITY}, {MAX_QUALITY}]"),
            ));
        }
        if let Err(e) = self.qmc.validate() {
            errs.push(FieldError::new("qmc", e.to_string()));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

fn unknown_keys(value: &Value) -> Vec<FieldError> {
    let mut errs = Vec::new();
    let Value::Object(top) = value else {
        return errs;
    };
    for (key, v) in top {
        if !TOP_KEYS.contains(&key.as_str()) {
            errs.push(FieldError::new(key.clone(), "unknown key"));
            continue;
        }
        let Some((_, allowed)) = NESTED_KEYS.iter().find(|(k, _)| k == key) else {
            continue;
        };
        if let Value::Object(inner) = v {
            for sub in inner.keys() {
                if !allowed.contains(&sub.as_str()) {
                    errs.push(FieldError::new(format!("{key}.{sub}"), "unknown key"));
                }
            }
        }
    }
    errs
}
