use crate::corrections::{thresholds, ThresholdSet};
use crate::error::{Error, Result};
use crate::mvn::{mvn_rectangle, QmcSettings};
use crate::normal::phi;
use crate::opchar::PmfEvaluator;
use crate::outcome::{law_from_parts, named_scenarios, unit_variances, OutcomeKind, OutcomeModel, SampleSizes, ZLaw};
use crate::scenario::DesignScenario;

use super::{optimal_ratios, Design, PowerGoal};

/// Largest control-arm size the search will consider.
pub const N0_LIMIT: f64 = 1e7;
const RELATIVE_WIDTH: f64 = 1e-6;
const SMALLEST_N0: f64 = 1e-6;

/// Allocation ratios: the fixed ones, or the optimum for the requested
/// criterion.
pub fn resolve_ratios(scenario: &DesignScenario) -> Result<Vec<f64>> {
    let model = scenario.model()?;
    match (&scenario.allocation, scenario.allocation.criterion()) {
        (super::Allocation::Fixed { ratios }, _) => Ok(ratios.clone()),
        (_, Some(criterion)) => {
            let v = match &model.kind {
                OutcomeKind::Normal { sigma } => sigma.iter().map(|s| s * s).collect(),
                OutcomeKind::Bernoulli { .. } => scenario
                    .assumed_pis
                    .as_ref()
                    .ok_or_else(|| Error::validation("assumed_pis", "required for optimal allocation"))?
                    .iter()
                    .map(|p| p * (1.0 - p))
                    .collect::<Vec<_>>(),
            };
            optimal_ratios(criterion, &v)
        }
        _ => unreachable!("non-fixed allocations have a criterion"),
    }
}

/// Per-patient variances under the global null, control first.
fn null_variances(model: &OutcomeModel) -> Vec<f64> {
    match &model.kind {
        OutcomeKind::Normal { sigma } => sigma.iter().map(|s| s * s).collect(),
        OutcomeKind::Bernoulli { pi0 } => vec![pi0 * (1.0 - pi0); model.k + 1],
    }
}

/// Thresholds of the scenario's correction. Correlation-based corrections
/// use the null correlation of the statistics, which depends on the
/// ratios but not on n₀.
pub fn design_thresholds(
    scenario: &DesignScenario,
    model: &OutcomeModel,
    ratios: &[f64],
) -> Result<ThresholdSet> {
    let null = law_from_parts(
        &null_variances(model),
        &SampleSizes::from_ratios(1.0, ratios),
        &vec![0.0; model.k],
    )?;
    let corr = scenario.mcc.needs_correlation().then_some(&null.corr);
    thresholds(scenario.mcc, scenario.alpha, model.k, corr, &scenario.qmc)
}

struct Target {
    variances: Vec<f64>,
    tau: Vec<f64>,
    /// Arm whose marginal power counts, for LFC targets.
    arm: Option<usize>,
}

/// Evaluates the scenario's power goal at arbitrary sample sizes with
/// fixed thresholds.
pub struct PowerEvaluator {
    goal: PowerGoal,
    thresholds: ThresholdSet,
    critical: Vec<f64>,
    pmf: PmfEvaluator,
    settings: QmcSettings,
    targets: Vec<Target>,
}

impl PowerEvaluator {
    pub fn new(scenario: &DesignScenario, thresholds: &ThresholdSet) -> Result<Self> {
        let model = scenario.model()?;
        let named = named_scenarios(&model, scenario.delta1, scenario.delta0)?;
        let targets = match scenario.power_goal {
            PowerGoal::ConjunctiveHa | PowerGoal::DisjunctiveHa => vec![(&named[1], None)],
            PowerGoal::MinMarginalLfc => named[2..].iter().enumerate().map(|(k, s)| (s, Some(k))).collect(),
        }
        .into_iter()
        .map(|(s, arm)| {
            Ok(Target {
                variances: unit_variances(&model, s)?,
                tau: s.tau(),
                arm,
            })
        })
        .collect::<Result<_>>()?;
        Ok(Self {
            goal: scenario.power_goal,
            critical: thresholds.z_critical(),
            pmf: PmfEvaluator::new(thresholds, &scenario.qmc)?,
            thresholds: thresholds.clone(),
            settings: scenario.qmc,
            targets,
        })
    }

    pub fn power(&self, sizes: &SampleSizes) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for t in &self.targets {
            let law = law_from_parts(&t.variances, sizes, &t.tau)?;
            worst = worst.min(self.target_power(&law, t.arm)?);
        }
        Ok(worst)
    }

    fn target_power(&self, law: &ZLaw, arm: Option<usize>) -> Result<f64> {
        let k = law.mean.len();
        if self.thresholds.mcc.is_single_step() {
            let c = &self.critical;
            return Ok(match (self.goal, arm) {
                (_, Some(a)) => phi(law.mean[a] - c[a]),
                (PowerGoal::ConjunctiveHa, _) => {
                    mvn_rectangle(c, &vec![f64::INFINITY; k], &law.mean, &law.corr, &self.settings)?.value
                }
                _ => 1.0 - mvn_rectangle(&vec![f64::NEG_INFINITY; k], c, &law.mean, &law.corr, &self.settings)?.value,
            });
        }
        let pmf = self.pmf.pmf(law)?;
        Ok(match (self.goal, arm) {
            (_, Some(a)) => pmf.iter().filter(|(m, _)| m >> a & 1 == 1).map(|(_, p)| p).sum(),
            (PowerGoal::ConjunctiveHa, _) => pmf.probs[(1 << k) - 1],
            _ => 1.0 - pmf.probs[0],
        })
    }
}

/// Power delivered by the scenario's design at control size `n0`.
pub fn power_at(n0: f64, scenario: &DesignScenario, ratios: &[f64]) -> Result<f64> {
    if !(n0.is_finite() && n0 > 0.0) {
        return Err(Error::Domain(format!("n0 must be positive, got {n0}")));
    }
    let model = scenario.model()?;
    let t = design_thresholds(scenario, &model, ratios)?;
    PowerEvaluator::new(scenario, &t)?.power(&SampleSizes::from_ratios(n0, ratios))
}

/// Smallest n₀ whose power reaches 1 − β, by doubling from n₀ = 1 and then
/// bisecting to a relative width of 1e-6. With `integer_n` every arm is
/// rounded up afterwards and the power recomputed.
pub fn required_sample_size(scenario: &DesignScenario) -> Result<Design> {
    scenario.validate()?;
    let model = scenario.model()?;
    let ratios = resolve_ratios(scenario)?;
    let thresholds = design_thresholds(scenario, &model, &ratios)?;
    let eval = PowerEvaluator::new(scenario, &thresholds)?;
    let target = 1.0 - scenario.beta;
    let passes = |n0: f64| -> Result<bool> { Ok(eval.power(&SampleSizes::from_ratios(n0, &ratios))? >= target) };

    let (mut lo, mut hi);
    if passes(1.0)? {
        hi = 1.0;
        lo = 0.5;
        while passes(lo)? {
            hi = lo;
            lo /= 2.0;
            if lo < SMALLEST_N0 {
                lo = 0.0;
                break;
            }
        }
    } else {
        lo = 1.0;
        hi = 2.0;
        while !passes(hi)? {
            lo = hi;
            hi *= 2.0;
            if hi > N0_LIMIT {
                if passes(N0_LIMIT)? {
                    hi = N0_LIMIT;
                    break;
                }
                return Err(Error::SearchLimit {
                    target,
                    limit: N0_LIMIT,
                });
            }
        }
    }
    while hi - lo > RELATIVE_WIDTH * hi {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let continuous = SampleSizes::from_ratios(hi, &ratios);
    let sizes = if scenario.integer_n {
        continuous.rounded_up()
    } else {
        continuous
    };
    let achieved_power = eval.power(&sizes)?;
    Ok(Design {
        scenario: scenario.clone(),
        ratios: sizes.ratios(),
        total_n: sizes.total(),
        critical_values: thresholds.z_critical(),
        thresholds,
        achieved_power,
        continuous_n0: hi,
        sizes,
    })
}
