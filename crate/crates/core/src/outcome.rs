//! Outcome models and the joint law of the Wald statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};
use crate::mvn::CorrMatrix;

pub const MAX_ARMS: usize = 5;
/// Bernoulli proportions closer than this to 0 or 1 are degenerate.
pub const PROPORTION_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Known standard deviations σ₀..σ_K.
    Normal { sigma: Vec<f64> },
    /// Control response rate used to define the named scenarios.
    Bernoulli { pi0: f64 },
}

/// An outcome model for `k` experimental arms plus a shared control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub k: usize,
    pub kind: OutcomeKind,
}

impl OutcomeModel {
    pub fn normal(sigma: Vec<f64>) -> Result<Self> {
        let m = Self {
            k: sigma.len().saturating_sub(1),
            kind: OutcomeKind::Normal { sigma },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn normal_equal(k: usize, sigma: f64) -> Result<Self> {
        Self::normal(vec![sigma; k + 1])
    }

    pub fn bernoulli(k: usize, pi0: f64) -> Result<Self> {
        let m = Self {
            k,
            kind: OutcomeKind::Bernoulli { pi0 },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(1..=MAX_ARMS).contains(&self.k) {
            errs.push(FieldError::new("K", format!("must lie in [1, {MAX_ARMS}], got {}", self.k)));
        }
        match &self.kind {
            OutcomeKind::Normal { sigma } => {
                if sigma.len() != self.k + 1 {
                    errs.push(FieldError::new(
                        "outcome.sigma",
                        format!("expected {} standard deviations, got {}", self.k + 1, sigma.len()),
                    ));
                }
                for (i, s) in sigma.iter().enumerate() {
                    if !(s.is_finite() && *s > 0.0) {
                        errs.push(FieldError::new(format!("outcome.sigma[{i}]"), "must be positive"));
                    }
                }
            }
            OutcomeKind::Bernoulli { pi0 } => {
                if !proportion_ok(*pi0) {
                    errs.push(FieldError::new(
                        "outcome.pi0",
                        format!("must lie strictly inside ({PROPORTION_GUARD}, {})", 1.0 - PROPORTION_GUARD),
                    ));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn is_bernoulli(&self) -> bool {
        matches!(self.kind, OutcomeKind::Bernoulli { .. })
    }
}

fn proportion_ok(p: f64) -> bool {
    p > PROPORTION_GUARD && p < 1.0 - PROPORTION_GUARD
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioLabel {
    #[serde(rename = "HG")]
    GlobalNull,
    #[serde(rename = "HA")]
    GlobalAlternative,
    #[serde(rename = "LFC")]
    LeastFavourable(usize),
    Custom,
}

impl std::fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScenarioLabel::GlobalNull => write!(f, "HG"),
            ScenarioLabel::GlobalAlternative => write!(f, "HA"),
            ScenarioLabel::LeastFavourable(k) => write!(f, "LFC{k}"),
            ScenarioLabel::Custom => write!(f, "custom"),
        }
    }
}

/// True treatment effects. Bernoulli truths are stored as the full vector
/// of response rates π₀..π_K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effects {
    Tau(Vec<f64>),
    Pi(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectScenario {
    pub label: ScenarioLabel,
    pub effects: Effects,
}

impl EffectScenario {
    pub fn custom(effects: Effects) -> Self {
        Self {
            label: ScenarioLabel::Custom,
            effects,
        }
    }

    /// Treatment effects τ₁..τ_K (for Bernoulli, π_k − π₀).
    pub fn tau(&self) -> Vec<f64> {
        match &self.effects {
            Effects::Tau(t) => t.clone(),
            Effects::Pi(p) => p[1..].iter().map(|pk| pk - p[0]).collect(),
        }
    }

    /// `true` where H_k: τ_k ≤ 0 is false.
    pub fn false_nulls(&self) -> Vec<bool> {
        self.tau().iter().map(|&t| t > 0.0).collect()
    }
}

/// Sample sizes of the control (`n0`) and experimental arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizes {
    pub n0: f64,
    pub n: Vec<f64>,
    pub integer: bool,
}

impl SampleSizes {
    pub fn from_ratios(n0: f64, ratios: &[f64]) -> Self {
        Self {
            n0,
            n: ratios.iter().map(|r| r * n0).collect(),
            integer: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(&self.n0).chain(&self.n);
        if all.clone().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Domain("sample sizes must be positive".into()));
        }
        if self.integer && all.clone().any(|v| v.fract() != 0.0) {
            return Err(Error::Domain("integer sample sizes required".into()));
        }
        Ok(())
    }

    /// Every arm rounded up to the next whole patient.
    pub fn rounded_up(&self) -> Self {
        let up = |v: f64| (v - 1e-9).ceil().max(1.0);
        Self {
            n0: up(self.n0),
            n: self.n.iter().map(|&v| up(v)).collect(),
            integer: true,
        }
    }

    pub fn total(&self) -> f64 {
        self.n0 + self.n.iter().sum::<f64>()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.n.iter().map(|v| v / self.n0).collect()
    }

    pub fn all(&self) -> Vec<f64> {
        std::iter::once(self.n0).chain(self.n.iter().copied()).collect()
    }
}

/// Mean, correlation, and information of the Wald statistics Z₁..Z_K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZLaw {
    pub mean: Vec<f64>,
    pub corr: CorrMatrix,
    pub info: Vec<f64>,
}

/// Per-patient outcome variances of arms 0..K under `scenario`.
pub fn unit_variances(model: &OutcomeModel, scenario: &EffectScenario) -> Result<Vec<f64>> {
    let k = model.k;
    match (&model.kind, &scenario.effects) {
        (OutcomeKind::Normal { sigma }, Effects::Tau(tau)) => {
            check_len(tau.len(), k)?;
            Ok(sigma.iter().map(|s| s * s).collect())
        }
        (OutcomeKind::Bernoulli { .. }, Effects::Pi(pi)) => {
            check_len(pi.len(), k + 1)?;
            pi.iter()
                .enumerate()
                .map(|(i, &p)| {
                    if proportion_ok(p) {
                        Ok(p * (1.0 - p))
                    } else {
                        Err(Error::Domain(format!(
                            "degenerate variance: proportion {p} for arm {i} is at or beyond 0/1"
                        )))
                    }
                })
                .collect()
        }
        _ => Err(Error::Domain(
            "scenario effects do not match the outcome model".into(),
        )),
    }
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "scenario has {got} entries, expected {want}"
        )))
    }
}

fn check_sizes(model: &OutcomeModel, sizes: &SampleSizes) -> Result<()> {
    sizes.validate()?;
    check_len(sizes.n.len(), model.k)
}

/// Information levels I₁..I_K.
pub fn information(
    model: &OutcomeModel,
    sizes: &SampleSizes,
    scenario: &EffectScenario,
) -> Result<Vec<f64>> {
    check_sizes(model, sizes)?;
    let v = unit_variances(model, scenario)?;
    Ok(info_from_variances(&v, sizes))
}

pub(crate) fn info_from_variances(v: &[f64], sizes: &SampleSizes) -> Vec<f64> {
    let shared = v[0] / sizes.n0;
    sizes
        .n
        .iter()
        .zip(&v[1..])
        .map(|(nk, vk)| 1.0 / (shared + vk / nk))
        .collect()
}

pub fn z_law(model: &OutcomeModel, sizes: &SampleSizes, scenario: &EffectScenario) -> Result<ZLaw> {
    check_sizes(model, sizes)?;
    let v = unit_variances(model, scenario)?;
    let tau = scenario.tau();
    check_len(tau.len(), model.k)?;
    law_from_parts(&v, sizes, &tau)
}

pub(crate) fn law_from_parts(v: &[f64], sizes: &SampleSizes, tau: &[f64]) -> Result<ZLaw> {
    let info = info_from_variances(v, sizes);
    let shared = v[0] / sizes.n0;
    let k = info.len();
    let mut entries = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            entries[i * k + j] = if i == j {
                1.0
            } else {
                (info[i] * info[j]).sqrt() * shared
            };
        }
    }
    Ok(ZLaw {
        mean: tau.iter().zip(&info).map(|(t, i)| t * i.sqrt()).collect(),
        corr: CorrMatrix::from_row_major(k, entries)?,
        info,
    })
}

/// H_G, H_A, and LFC₁..LFC_K for the given interesting and uninteresting
/// effects.
pub fn named_scenarios(model: &OutcomeModel, delta1: f64, delta0: f64) -> Result<Vec<EffectScenario>> {
    model.validate()?;
    check_deltas(model, delta1, delta0)?;
    let k = model.k;
    let build = |label: ScenarioLabel, tau: Vec<f64>| EffectScenario {
        label,
        effects: match model.kind {
            OutcomeKind::Normal { .. } => Effects::Tau(tau),
            OutcomeKind::Bernoulli { pi0 } => {
                Effects::Pi(std::iter::once(pi0).chain(tau.iter().map(|t| pi0 + t)).collect())
            }
        },
    };
    let mut out = vec![
        build(ScenarioLabel::GlobalNull, vec![0.0; k]),
        build(ScenarioLabel::GlobalAlternative, vec![delta1; k]),
    ];
    for arm in 1..=k {
        let tau = (1..=k).map(|j| if j == arm { delta1 } else { delta0 }).collect();
        out.push(build(ScenarioLabel::LeastFavourable(arm), tau));
    }
    Ok(out)
}

/// Effect-size constraints, reporting every violated bound.
pub fn check_deltas(model: &OutcomeModel, delta1: f64, delta0: f64) -> Result<()> {
    let mut errs = Vec::new();
    if !(delta1.is_finite() && delta1 > 0.0) {
        errs.push(FieldError::new("delta1", "must be positive"));
    }
    if !(delta0.is_finite() && delta0 < delta1) {
        errs.push(FieldError::new("delta0", "must be strictly less than delta1"));
    }
    if let OutcomeKind::Bernoulli { pi0 } = model.kind {
        if !(delta1 < 1.0 - pi0) {
            errs.push(FieldError::new(
                "delta1",
                format!("must be below 1 - pi0 = {}", 1.0 - pi0),
            ));
        }
        if !(delta0 > -pi0) {
            errs.push(FieldError::new("delta0", format!("must exceed -pi0 = {}", -pi0)));
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(errs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Binomial, Distribution};

    fn equal(n: f64, k: usize) -> SampleSizes {
        SampleSizes::from_ratios(n, &vec![1.0; k])
    }

    #[test]
    fn normal_information() {
        let m = OutcomeModel::normal_equal(1, 1.0).unwrap();
        let s = EffectScenario::custom(Effects::Tau(vec![0.0]));
        assert!((information(&m, &equal(100.0, 1), &s).unwrap()[0] - 50.0).abs() < 1e-12);

        let m = OutcomeModel::normal(vec![2.0, 1.0]).unwrap();
        let sizes = SampleSizes { n0: 200.0, n: vec![50.0], integer: false };
        assert!((information(&m, &sizes, &s).unwrap()[0] - 25.0).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_information() {
        let m = OutcomeModel::bernoulli(1, 0.3).unwrap();
        let s = EffectScenario::custom(Effects::Pi(vec![0.3, 0.3]));
        let i = information(&m, &equal(100.0, 1), &s).unwrap()[0];
        assert!((i - 1.0 / (2.0 * 0.21 / 100.0)).abs() < 1e-9);
        assert!((i - 238.095).abs() < 1e-3);
        let bad = EffectScenario::custom(Effects::Pi(vec![0.3, 1.0]));
        assert!(matches!(information(&m, &equal(100.0, 1), &bad), Err(Error::Domain(_))));
    }

    #[test]
    fn equal_allocation_correlation() {
        let m = OutcomeModel::normal_equal(4, 1.3).unwrap();
        let s = EffectScenario::custom(Effects::Tau(vec![0.1; 4]));
        let law = z_law(&m, &equal(37.0, 4), &s).unwrap();
        assert_eq!(law.corr.common_correlation(1e-12), Some(0.5));
        let m1 = OutcomeModel::normal_equal(1, 1.0).unwrap();
        let s1 = EffectScenario::custom(Effects::Tau(vec![0.2]));
        assert_eq!(z_law(&m1, &equal(10.0, 1), &s1).unwrap().corr.dim(), 1);
    }

    #[test]
    fn bernoulli_law_matches_patient_simulation() {
        let m = OutcomeModel::bernoulli(2, 0.3).unwrap();
        let pi = [0.3, 0.45, 0.3];
        let s = EffectScenario::custom(Effects::Pi(pi.to_vec()));
        let sizes = equal(50.0, 2);
        let law = z_law(&m, &sizes, &s).unwrap();
        // simulate the design-stage statistic (true-variance information)
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 1_000_000;
        let bins: Vec<_> = pi.iter().map(|&p| Binomial::new(50, p).unwrap()).collect();
        let (mut s1, mut s2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..trials {
            let hat: Vec<f64> = bins.iter().map(|b| b.sample(&mut rng) as f64 / 50.0).collect();
            let z1 = (hat[1] - hat[0]) * law.info[0].sqrt();
            let z2 = (hat[2] - hat[0]) * law.info[1].sqrt();
            s1 += z1;
            s2 += z2;
            s11 += z1 * z1;
            s22 += z2 * z2;
            s12 += z1 * z2;
        }
        let n = trials as f64;
        let (m1, m2) = (s1 / n, s2 / n);
        let (v1, v2) = (s11 / n - m1 * m1, s22 / n - m2 * m2);
        let r = (s12 / n - m1 * m2) / (v1 * v2).sqrt();
        let se_mean = (1.0 / n).sqrt();
        assert!((m1 - law.mean[0]).abs() < 3.0 * se_mean, "{m1} vs {}", law.mean[0]);
        assert!((m2 - law.mean[1]).abs() < 3.0 * se_mean);
        let rho = law.corr.get(0, 1);
        let se_r = (1.0 - rho * rho) / n.sqrt();
        assert!((r - rho).abs() < 3.0 * se_r, "{r} vs {rho}");
    }

    #[test]
    fn named_scenarios_bernoulli() {
        let m = OutcomeModel::bernoulli(2, 0.3).unwrap();
        let sc = named_scenarios(&m, 0.15, 0.0).unwrap();
        assert_eq!(sc.len(), 4);
        let close = |e: &Effects, want: [f64; 3]| match e {
            Effects::Pi(p) => p.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15),
            Effects::Tau(_) => false,
        };
        assert!(close(&sc[1].effects, [0.3, 0.45, 0.45]));
        assert!(close(&sc[2].effects, [0.3, 0.45, 0.3]));
        assert_eq!(sc[2].label, ScenarioLabel::LeastFavourable(1));
    }

    #[test]
    fn named_scenarios_k1_collapse() {
        let m = OutcomeModel::normal_equal(1, 1.0).unwrap();
        let sc = named_scenarios(&m, 0.5, 0.0).unwrap();
        assert_eq!(sc[1].effects, sc[2].effects);
    }

    #[test]
    fn named_scenarios_validation() {
        let m = OutcomeModel::normal_equal(2, 1.0).unwrap();
        match named_scenarios(&m, 0.3, 0.3) {
            Err(Error::Validation(e)) => assert!(e.iter().any(|f| f.field == "delta0")),
            other => panic!("{other:?}"),
        }
        let b = OutcomeModel::bernoulli(2, 0.3).unwrap();
        match named_scenarios(&b, 0.8, -0.5) {
            Err(Error::Validation(e)) => {
                assert!(e.iter().any(|f| f.field == "delta1"));
                assert!(e.iter().any(|f| f.field == "delta0"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn global_null_mean_is_zero() {
        for m in [
            OutcomeModel::normal(vec![1.0, 2.0, 0.5]).unwrap(),
            OutcomeModel::bernoulli(2, 0.4).unwrap(),
        ] {
            let hg = &named_scenarios(&m, 0.1, 0.0).unwrap()[0];
            let sizes = SampleSizes { n0: 30.0, n: vec![20.0, 45.0], integer: false };
            assert!(z_law(&m, &sizes, hg).unwrap().mean.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bernoulli_null_equals_normal_with_matching_variance() {
        let pi0: f64 = 0.35;
        let b = OutcomeModel::bernoulli(3, pi0).unwrap();
        let n = OutcomeModel::normal_equal(3, (pi0 * (1.0 - pi0)).sqrt()).unwrap();
        let sizes = SampleSizes { n0: 40.0, n: vec![20.0, 60.0, 33.0], integer: false };
        let lb = z_law(&b, &sizes, &named_scenarios(&b, 0.1, 0.0).unwrap()[0]).unwrap();
        let ln = z_law(&n, &sizes, &named_scenarios(&n, 0.1, 0.0).unwrap()[0]).unwrap();
        for (x, y) in lb.info.iter().zip(&ln.info) {
            assert!((x - y).abs() <= 1e-12 * x);
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((lb.corr.get(i, j) - ln.corr.get(i, j)).abs() < 1e-14);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn scaling_sizes(c in 0.1f64..50.0, n0 in 1.0f64..500.0, r1 in 0.2f64..3.0, r2 in 0.2f64..3.0,
                         s0 in 0.2f64..3.0, s1 in 0.2f64..3.0, s2 in 0.2f64..3.0) {
            let m = OutcomeModel::normal(vec![s0, s1, s2]).unwrap();
            let sc = EffectScenario::custom(Effects::Tau(vec![0.1, 0.2]));
            let a = z_law(&m, &SampleSizes::from_ratios(n0, &[r1, r2]), &sc).unwrap();
            let b = z_law(&m, &SampleSizes::from_ratios(c * n0, &[r1, r2]), &sc).unwrap();
            for k in 0..2 {
                proptest::prop_assert!((b.info[k] - c * a.info[k]).abs() <= 1e-9 * b.info[k]);
            }
            let rho = a.corr.get(0, 1);
            proptest::prop_assert!((b.corr.get(0, 1) - rho).abs() < 1e-12);
            proptest::prop_assert!(rho > 0.0 && rho < 1.0);
        }
    }
}
