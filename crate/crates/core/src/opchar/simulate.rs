use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{opchars_from_pmf, OpChars, PmfMethod, RejectionPmf};
use crate::corrections::{Procedure, ThresholdSet};
use crate::error::{Error, Result};
use crate::outcome::{unit_variances, Effects, EffectScenario, OutcomeKind, OutcomeModel, SampleSizes};

pub const MIN_REPLICATES: u64 = 1000;
const BLOCK: u64 = 4096;

/// Empirical operating characteristics from simulated trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub opchars: OpChars,
    /// Monte-Carlo standard error of each quantity, in the same layout.
    pub standard_errors: OpChars,
    pub pmf: RejectionPmf,
    pub replicates: u64,
    pub seed: u64,
    /// Sizes actually used to generate data.
    pub sizes: SampleSizes,
}

/// Simulates `replicates` trials with patient-level outcomes summarised by
/// their sufficient statistics, tests them with `thresholds`, and averages
/// the resulting operating characteristics. Non-integer sizes are rounded
/// up. Results depend only on the inputs, not on the thread count.
pub fn simulate_trials(
    model: &OutcomeModel,
    sizes: &SampleSizes,
    scenario: &EffectScenario,
    thresholds: &ThresholdSet,
    replicates: u64,
    seed: u64,
) -> Result<SimulationResult> {
    if replicates < MIN_REPLICATES {
        return Err(Error::validation(
            "replicates",
            format!("at least {MIN_REPLICATES} replicates required, got {replicates}"),
        ));
    }
    model.validate()?;
    let k = model.k;
    if thresholds.k() != k {
        return Err(Error::Domain(format!("thresholds for {} arms, model has {k}", thresholds.k())));
    }
    let sizes = if sizes.integer { sizes.clone() } else { sizes.rounded_up() };
    sizes.validate()?;
    if sizes.n.len() != k {
        return Err(Error::Domain("sample sizes do not match the number of arms".into()));
    }
    // validates the scenario against the model
    unit_variances(model, scenario)?;
    let arm = ArmSampler::new(model, &sizes, scenario)?;
    let procedure = Procedure::new(thresholds);

    let blocks = replicates.div_ceil(BLOCK);
    let cells = 1usize << k;
    let counts = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let reps = BLOCK.min(replicates - b * BLOCK);
            let mut counts = vec![0u64; cells];
            let mut z = vec![0.0; k];
            for _ in 0..reps {
                arm.draw(&mut rng, &mut z);
                counts[procedure.reject_z_mask(&z) as usize] += 1;
            }
            counts
        })
        .reduce(
            || vec![0u64; cells],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let n = replicates as f64;
    let pmf = RejectionPmf {
        k,
        probs: counts.iter().map(|&c| c as f64 / n).collect(),
        method: PmfMethod::Simulation,
        error_estimate: 0.0,
    };
    let truth = scenario.false_nulls();
    let opchars = opchars_from_pmf(&pmf, &truth)?;
    let standard_errors = standard_errors(&pmf, &truth, &opchars, n)?;
    Ok(SimulationResult {
        opchars,
        standard_errors,
        pmf,
        replicates,
        seed,
        sizes,
    })
}

/// Every quantity is the mean over trials of a function of the rejection
/// outcome (pFDR over trials with a rejection), so its standard error
/// follows from the empirical pmf.
fn standard_errors(pmf: &RejectionPmf, truth: &[bool], mean: &OpChars, n: f64) -> Result<OpChars> {
    let k = pmf.k;
    let mut sq = zeroed(k);
    let mut pfdr_sq = 0.0;
    let mut with_rejection = 0.0;
    for (mask, p) in pmf.iter() {
        if p == 0.0 {
            continue;
        }
        let mut point = vec![0.0; pmf.probs.len()];
        point[mask as usize] = 1.0;
        let one = opchars_from_pmf(
            &RejectionPmf {
                k,
                probs: point,
                method: PmfMethod::Simulation,
                error_estimate: 0.0,
            },
            truth,
        )?;
        let d = |a: f64, b: f64| p * (a - b).powi(2);
        sq.p_con += d(one.p_con, mean.p_con);
        sq.p_dis += d(one.p_dis, mean.p_dis);
        for i in 0..k {
            sq.p_marginal[i] += d(one.p_marginal[i], mean.p_marginal[i]);
            sq.fwer_i[i] += d(one.fwer_i[i], mean.fwer_i[i]);
            sq.fwer_ii[i] += d(one.fwer_ii[i], mean.fwer_ii[i]);
        }
        sq.pher += d(one.pher, mean.pher);
        sq.fdr += d(one.fdr, mean.fdr);
        sq.fndr += d(one.fndr, mean.fndr);
        sq.sensitivity += d(one.sensitivity, mean.sensitivity);
        sq.specificity += d(one.specificity, mean.specificity);
        if let (Some(a), Some(b)) = (one.pfdr, mean.pfdr) {
            pfdr_sq += d(a, b);
            with_rejection += p;
        }
    }
    let se = |v: f64| (v / n).sqrt();
    let mut out = zeroed(k);
    out.p_con = se(sq.p_con);
    out.p_dis = se(sq.p_dis);
    out.p_marginal = sq.p_marginal.iter().map(|&v| se(v)).collect();
    out.pher = se(sq.pher);
    out.fwer_i = sq.fwer_i.iter().map(|&v| se(v)).collect();
    out.fwer_ii = sq.fwer_ii.iter().map(|&v| se(v)).collect();
    out.fdr = se(sq.fdr);
    out.fndr = se(sq.fndr);
    out.pfdr = mean
        .pfdr
        .map(|_| (pfdr_sq / with_rejection / (with_rejection * n)).sqrt());
    out.sensitivity = se(sq.sensitivity);
    out.specificity = se(sq.specificity);
    out.flags = mean.flags.clone();
    Ok(out)
}

fn zeroed(k: usize) -> OpChars {
    OpChars {
        p_con: 0.0,
        p_dis: 0.0,
        p_marginal: vec![0.0; k],
        pher: 0.0,
        fwer_i: vec![0.0; k],
        fwer_ii: vec![0.0; k],
        fdr: 0.0,
        fndr: 0.0,
        pfdr: None,
        sensitivity: 0.0,
        specificity: 0.0,
        flags: Default::default(),
    }
}

/// Draws the Wald statistics of one simulated trial.
enum ArmSampler {
    /// Arm means of normal outcomes are normal with variance σ²/n.
    Normal { sd: Vec<f64>, tau: Vec<f64>, scale: Vec<f64> },
    /// Responder counts are binomial; the information is re-estimated
    /// from the observed proportions.
    Bernoulli { dists: Vec<Binomial>, n: Vec<f64> },
}

impl ArmSampler {
    fn new(model: &OutcomeModel, sizes: &SampleSizes, scenario: &EffectScenario) -> Result<Self> {
        let n = sizes.all();
        match (&model.kind, &scenario.effects) {
            (OutcomeKind::Normal { sigma }, Effects::Tau(tau)) => {
                let sd: Vec<f64> = sigma.iter().zip(&n).map(|(s, m)| s / m.sqrt()).collect();
                let scale = sd[1..]
                    .iter()
                    .map(|s| 1.0 / (sd[0] * sd[0] + s * s).sqrt())
                    .collect();
                Ok(Self::Normal {
                    sd,
                    tau: tau.clone(),
                    scale,
                })
            }
            (OutcomeKind::Bernoulli { .. }, Effects::Pi(pi)) => {
                let dists = pi
                    .iter()
                    .zip(&n)
                    .map(|(&p, &m)| {
                        Binomial::new(m as u64, p).map_err(|e| Error::Domain(format!("binomial({m}, {p}): {e}")))
                    })
                    .collect::<Result<_>>()?;
                Ok(Self::Bernoulli { dists, n })
            }
            _ => Err(Error::Domain("scenario effects do not match the outcome model".into())),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, z: &mut [f64]) {
        match self {
            Self::Normal { sd, tau, scale } => {
                let g = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
                let control = sd[0] * g(rng);
                for (i, zi) in z.iter_mut().enumerate() {
                    let arm = tau[i] + sd[i + 1] * g(rng);
                    *zi = (arm - control) * scale[i];
                }
            }
            Self::Bernoulli { dists, n } => {
                let p0 = dists[0].sample(rng) as f64 / n[0];
                let v0 = plug_in_variance(p0, n[0]) / n[0];
                for (i, zi) in z.iter_mut().enumerate() {
                    let pk = dists[i + 1].sample(rng) as f64 / n[i + 1];
                    let vk = plug_in_variance(pk, n[i + 1]) / n[i + 1];
                    *zi = (pk - p0) / (v0 + vk).sqrt();
                }
            }
        }
    }
}

/// π̂(1−π̂) with π̂ kept at least half a patient away from 0 and 1.
fn plug_in_variance(p: f64, n: f64) -> f64 {
    let floor = 0.5 / n;
    let p = p.clamp(floor, 1.0 - floor);
    p * (1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrections::{thresholds, Mcc};
    use crate::mvn::QmcSettings;
    use crate::outcome::{named_scenarios, z_law};
    use crate::opchar::outcome_pmf;

    #[test]
    fn k1_null_rejection_rate() {
        let model = OutcomeModel::normal_equal(1, 1.0).unwrap();
        let sizes = SampleSizes::from_ratios(50.0, &[1.0]);
        let s = QmcSettings::default();
        let t = thresholds(Mcc::None, 0.05, 1, None, &s).unwrap();
        let hg = &named_scenarios(&model, 0.3, 0.0).unwrap()[0];
        let r = simulate_trials(&model, &sizes, hg, &t, 100_000, 7).unwrap();
        let band = 3.0 * (0.05f64 * 0.95 / 1e5).sqrt();
        assert!((r.opchars.p_dis - 0.05).abs() < band, "{}", r.opchars.p_dis);
        assert!((r.standard_errors.p_dis - (0.05f64 * 0.95 / 1e5).sqrt()).abs() < 1e-4);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let model = OutcomeModel::bernoulli(2, 0.3).unwrap();
        let sizes = SampleSizes::from_ratios(60.0, &[1.0, 1.0]);
        let s = QmcSettings::default();
        let t = thresholds(Mcc::HolmBonferroni, 0.1, 2, None, &s).unwrap();
        let ha = &named_scenarios(&model, 0.15, 0.0).unwrap()[1];
        let a = simulate_trials(&model, &sizes, ha, &t, 10_000, 11).unwrap();
        let b = simulate_trials(&model, &sizes, ha, &t, 10_000, 11).unwrap();
        let c = simulate_trials(&model, &sizes, ha, &t, 10_000, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pmf, c.pmf);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let model = OutcomeModel::normal_equal(3, 1.0).unwrap();
        let sizes = SampleSizes::from_ratios(30.0, &[1.0, 2.0, 1.0]);
        let s = QmcSettings::default();
        let t = thresholds(Mcc::Hochberg, 0.05, 3, None, &s).unwrap();
        let lfc = &named_scenarios(&model, 0.5, 0.1).unwrap()[3];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_trials(&model, &sizes, lfc, &t, 20_000, 3).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn too_few_replicates() {
        let model = OutcomeModel::normal_equal(1, 1.0).unwrap();
        let s = QmcSettings::default();
        let t = thresholds(Mcc::None, 0.05, 1, None, &s).unwrap();
        let hg = &named_scenarios(&model, 0.3, 0.0).unwrap()[0];
        let e = simulate_trials(&model, &SampleSizes::from_ratios(10.0, &[1.0]), hg, &t, 10, 1).unwrap_err();
        assert!(e.is_validation());
    }

    #[test]
    fn bonferroni_pmf_matches_analytic() {
        let model = OutcomeModel::normal_equal(2, 1.0).unwrap();
        let sizes = SampleSizes::from_ratios(40.0, &[1.0, 1.0]);
        let s = QmcSettings::default();
        let t = thresholds(Mcc::Bonferroni, 0.05, 2, None, &s).unwrap();
        let hg = &named_scenarios(&model, 0.4, 0.0).unwrap()[0];
        let sim = simulate_trials(&model, &sizes, hg, &t, 100_000, 5).unwrap();
        let law = z_law(&model, &sizes, hg).unwrap();
        let exact = outcome_pmf(&law, &t, &s).unwrap();
        for (a, b) in exact.probs.iter().zip(&sim.pmf.probs) {
            assert!((a - b).abs() < 5e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn plug_in_floor() {
        assert!((plug_in_variance(0.0, 10.0) - 0.0475).abs() < 1e-15);
        assert!((plug_in_variance(1.0, 10.0) - 0.0475).abs() < 1e-15);
        assert_eq!(plug_in_variance(0.3, 10.0), 0.3 * 0.7);
    }
}
