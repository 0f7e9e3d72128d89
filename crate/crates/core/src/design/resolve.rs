use serde::{Deserialize, Serialize};

use crate::corrections::Mcc;
use crate::error::Result;
use crate::opchar::{
    curves, opchars_from_pmf, simulate_trials, CurveData, OpChars, PmfEvaluator, PmfMethod, ReferenceLines,
};
use crate::outcome::{named_scenarios, z_law, EffectScenario, ScenarioLabel, SampleSizes};
use crate::scenario::DesignScenario;

use super::{required_sample_size, Design};

/// Operating characteristics of a design under one named truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub label: ScenarioLabel,
    pub truth: EffectScenario,
    pub opchars: OpChars,
    pub method: PmfMethod,
    pub error_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub code: String,
    pub message: String,
}

/// Everything produced for a scenario: the design, its operating
/// characteristics under H_G, H_A and each LFC_k, and the plot data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub design: Design,
    pub opchars: Vec<ScenarioResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<CurveData>,
    pub warnings: Vec<Warning>,
}

impl DesignReport {
    pub fn get(&self, label: &ScenarioLabel) -> Option<&ScenarioResult> {
        self.opchars.iter().find(|r| &r.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Conditions under which resolving the scenario is expected to be slow.
pub fn runtime_warnings(scenario: &DesignScenario) -> Vec<Warning> {
    let mut out = Vec::new();
    if scenario.k == crate::outcome::MAX_ARMS {
        out.push(Warning {
            code: "long_runtime".into(),
            message: format!("K = {}: computations may take a while", scenario.k),
        });
    }
    if scenario.mcc == Mcc::StepdownDunnett {
        out.push(Warning {
            code: "long_runtime".into(),
            message: "step-down Dunnett correction: computations may take a while".into(),
        });
    }
    out
}

/// Operating characteristics of `design` at `sizes` under H_G, H_A and
/// every LFC_k.
pub fn evaluate_design(design: &Design, sizes: &SampleSizes) -> Result<Vec<ScenarioResult>> {
    let s = &design.scenario;
    let model = s.model()?;
    let eval = PmfEvaluator::new(&design.thresholds, &s.qmc)?;
    named_scenarios(&model, s.delta1, s.delta0)?
        .into_iter()
        .map(|truth| {
            let pmf = eval.pmf(&z_law(&model, sizes, &truth)?)?;
            Ok(ScenarioResult {
                label: truth.label.clone(),
                opchars: opchars_from_pmf(&pmf, &truth.false_nulls())?,
                method: pmf.method,
                error_estimate: pmf.error_estimate,
                truth,
            })
        })
        .collect()
}

pub fn design_curves(design: &Design, quality: usize) -> Result<CurveData> {
    let s = &design.scenario;
    curves(
        &s.model()?,
        &design.sizes,
        &design.thresholds,
        ReferenceLines {
            alpha: s.alpha,
            power: 1.0 - s.beta,
            delta1: s.delta1,
            delta0: s.delta0,
        },
        quality,
        &s.qmc,
    )
}

/// Sample size, allocation, thresholds, operating characteristics and,
/// when plotting is on, curve data for `scenario`.
pub fn resolve_design(scenario: &DesignScenario) -> Result<DesignReport> {
    let design = required_sample_size(scenario)?;
    let opchars = evaluate_design(&design, &design.sizes)?;
    let curves = if scenario.plot.enabled {
        Some(design_curves(&design, scenario.plot.quality)?)
    } else {
        None
    };
    Ok(DesignReport {
        warnings: runtime_warnings(scenario),
        design,
        opchars,
        curves,
    })
}

/// Simulated against analytic operating characteristics for one truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRow {
    pub label: ScenarioLabel,
    pub simulated: OpChars,
    pub standard_errors: OpChars,
    /// Analytic values at the simulated (whole-patient) sample sizes.
    pub analytic: OpChars,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub replicates: u64,
    pub seed: u64,
    pub sizes: SampleSizes,
    pub rows: Vec<SimulationRow>,
    pub max_abs_diff: f64,
}

/// Simulates `design` under H_G, H_A and every LFC_k and compares with the
/// analytic values. Each truth gets its own seed derived from `seed`.
pub fn simulate_design(design: &Design, replicates: u64, seed: u64) -> Result<SimulationReport> {
    let s = &design.scenario;
    let model = s.model()?;
    let sizes = if design.sizes.integer {
        design.sizes.clone()
    } else {
        design.sizes.rounded_up()
    };
    let analytic = evaluate_design(design, &sizes)?;
    let rows = analytic
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let sim = simulate_trials(
                &model,
                &sizes,
                &a.truth,
                &design.thresholds,
                replicates,
                seed.wrapping_add(i as u64),
            )?;
            Ok(SimulationRow {
                max_abs_diff: sim.opchars.max_abs_diff(&a.opchars),
                label: a.label,
                simulated: sim.opchars,
                standard_errors: sim.standard_errors,
                analytic: a.opchars,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationReport {
        replicates,
        seed,
        max_abs_diff: rows.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max),
        sizes,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{Allocation, PowerGoal};
    use crate::scenario::{OutcomeSpec, Sigma};

    fn quick() -> DesignScenario {
        let mut s = DesignScenario {
            k: 2,
            outcome: OutcomeSpec::Normal { sigma: Sigma::Common(1.0) },
            alpha: 0.05,
            beta: 0.2,
            delta1: 0.5,
            delta0: 0.1,
            mcc: Mcc::Bonferroni,
            power_goal: PowerGoal::DisjunctiveHa,
            allocation: Allocation::Fixed { ratios: vec![1.0, 1.0] },
            ..DesignScenario::defaults()
        };
        s.plot.quality = 12;
        s
    }

    #[test]
    fn report_has_every_truth() {
        let r = resolve_design(&quick()).unwrap();
        let labels: Vec<String> = r.opchars.iter().map(|o| o.label.to_string()).collect();
        assert_eq!(labels, ["HG", "HA", "LFC1", "LFC2"]);
        assert_eq!(r.curves.as_ref().unwrap().theta.len(), 12);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn deterministic_output() {
        let a = resolve_design(&quick()).unwrap().to_json();
        let b = resolve_design(&quick()).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn warnings_for_slow_scenarios() {
        let mut s = quick();
        s.k = 5;
        s.mcc = Mcc::StepdownDunnett;
        assert_eq!(runtime_warnings(&s).len(), 2);
    }

    #[test]
    fn simulation_close_to_analytic() {
        let r = resolve_design(&quick()).unwrap();
        let sim = simulate_design(&r.design, 20_000, 9).unwrap();
        assert_eq!(sim.rows.len(), 4);
        assert!(sim.max_abs_diff < 0.02, "{}", sim.max_abs_diff);
        assert!(sim.sizes.integer);
    }
}
