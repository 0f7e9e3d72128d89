//! Multiple comparison corrections: significance thresholds and the
//! rejection rule they define.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvn::{equicoordinate_quantile, CorrMatrix, QmcSettings};
use crate::normal::{phi, phi_inv};

/// Off-diagonal spread tolerated when checking exchangeability.
pub const EXCHANGEABLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mcc {
    None,
    Bonferroni,
    Sidak,
    Dunnett,
    HolmBonferroni,
    HolmSidak,
    StepdownDunnett,
    Hochberg,
    BenjaminiHochberg,
    BenjaminiYekutieli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Pher,
    SingleStep,
    StepDown,
    StepUp,
    FdrStepUp,
}

impl Mcc {
    pub const ALL: [Mcc; 10] = [
        Mcc::None,
        Mcc::Bonferroni,
        Mcc::Sidak,
        Mcc::Dunnett,
        Mcc::HolmBonferroni,
        Mcc::HolmSidak,
        Mcc::StepdownDunnett,
        Mcc::Hochberg,
        Mcc::BenjaminiHochberg,
        Mcc::BenjaminiYekutieli,
    ];

    pub fn family(self) -> Family {
        match self {
            Mcc::None => Family::Pher,
            Mcc::Bonferroni | Mcc::Sidak | Mcc::Dunnett => Family::SingleStep,
            Mcc::HolmBonferroni | Mcc::HolmSidak | Mcc::StepdownDunnett => Family::StepDown,
            Mcc::Hochberg => Family::StepUp,
            Mcc::BenjaminiHochberg | Mcc::BenjaminiYekutieli => Family::FdrStepUp,
        }
    }

    /// The identifier used in scenario files and the HTTP API.
    pub fn id(self) -> &'static str {
        match self {
            Mcc::None => "none",
            Mcc::Bonferroni => "bonferroni",
            Mcc::Sidak => "sidak",
            Mcc::Dunnett => "dunnett",
            Mcc::HolmBonferroni => "holm_bonferroni",
            Mcc::HolmSidak => "holm_sidak",
            Mcc::StepdownDunnett => "stepdown_dunnett",
            Mcc::Hochberg => "hochberg",
            Mcc::BenjaminiHochberg => "benjamini_hochberg",
            Mcc::BenjaminiYekutieli => "benjamini_yekutieli",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.id() == id)
    }

    pub fn needs_correlation(self) -> bool {
        matches!(self, Mcc::Dunnett | Mcc::StepdownDunnett)
    }

    /// Procedures whose operating characteristics come from a single
    /// rectangle decomposition rather than quasi-random sampling.
    pub fn is_single_step(self) -> bool {
        matches!(self.family(), Family::Pher | Family::SingleStep)
    }

    pub fn controls_fwer(self) -> bool {
        matches!(
            self.family(),
            Family::SingleStep | Family::StepDown | Family::StepUp
        )
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Mcc::None => "None (per-hypothesis error-rate)",
            Mcc::Bonferroni => "Bonferroni",
            Mcc::Sidak => "Šidák",
            Mcc::Dunnett => "Dunnett",
            Mcc::HolmBonferroni => "Holm-Bonferroni",
            Mcc::HolmSidak => "Holm-Šidák",
            Mcc::StepdownDunnett => "Step-down Dunnett",
            Mcc::Hochberg => "Hochberg",
            Mcc::BenjaminiHochberg => "Benjamini-Hochberg",
            Mcc::BenjaminiYekutieli => "Benjamini-Yekutieli",
        }
    }
}

/// Significance levels γ₁..γ_K. For rank-based procedures γ_k applies to
/// the k-th smallest p-value; single-step procedures repeat one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub mcc: Mcc,
    pub alpha: f64,
    pub gammas: Vec<f64>,
}

impl ThresholdSet {
    pub fn k(&self) -> usize {
        self.gammas.len()
    }

    /// Critical values on the z scale: p ≤ γ exactly when z ≥ Φ⁻¹(1 − γ).
    pub fn z_critical(&self) -> Vec<f64> {
        self.gammas.iter().map(|&g| -phi_inv(g)).collect()
    }
}

pub fn thresholds(
    mcc: Mcc,
    alpha: f64,
    k: usize,
    corr: Option<&CorrMatrix>,
    settings: &QmcSettings,
) -> Result<ThresholdSet> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation("alpha", "must lie in (0, 1)"));
    }
    if k == 0 {
        return Err(Error::validation("K", "must be at least 1"));
    }
    let kf = k as f64;
    let ranks = 1..=k;
    let gammas: Vec<f64> = match mcc {
        Mcc::None => vec![alpha; k],
        Mcc::Bonferroni => vec![alpha / kf; k],
        Mcc::Sidak => vec![sidak(alpha, kf); k],
        Mcc::HolmBonferroni | Mcc::Hochberg => ranks.map(|r| alpha / (kf + 1.0 - r as f64)).collect(),
        Mcc::HolmSidak => ranks.map(|r| sidak(alpha, kf + 1.0 - r as f64)).collect(),
        Mcc::BenjaminiHochberg => ranks.map(|r| r as f64 * alpha / kf).collect(),
        Mcc::BenjaminiYekutieli => {
            let harmonic: f64 = (1..=k).map(|i| 1.0 / i as f64).sum();
            ranks.map(|r| r as f64 * alpha / (kf * harmonic)).collect()
        }
        Mcc::Dunnett => {
            let corr = required_corr(mcc, k, corr)?;
            let c = equicoordinate_quantile(alpha, corr, settings)?;
            vec![phi(-c); k]
        }
        Mcc::StepdownDunnett => {
            let corr = required_corr(mcc, k, corr)?;
            let rho = corr.common_correlation(EXCHANGEABLE_TOL).ok_or_else(|| {
                Error::Unsupported(
                    "step-down Dunnett needs equal correlations between all test statistics \
                     (equal allocation ratios and variances)"
                        .into(),
                )
            })?;
            let mut gammas = Vec::with_capacity(k);
            for r in 1..=k {
                let dim = k + 1 - r;
                let sub = CorrMatrix::exchangeable(dim, rho)?;
                let c = equicoordinate_quantile(alpha, &sub, settings)?;
                gammas.push(phi(-c));
            }
            gammas
        }
    };
    Ok(ThresholdSet { mcc, alpha, gammas })
}

fn sidak(alpha: f64, m: f64) -> f64 {
    // 1 − (1 − α)^{1/m} without cancellation
    -(f64::ln_1p(-alpha) / m).exp_m1()
}

fn required_corr<'a>(mcc: Mcc, k: usize, corr: Option<&'a CorrMatrix>) -> Result<&'a CorrMatrix> {
    let corr = corr.ok_or_else(|| {
        Error::Domain(format!("{} thresholds need the test-statistic correlation", mcc.id()))
    })?;
    if corr.dim() != k {
        return Err(Error::Domain(format!(
            "correlation has dimension {}, expected {k}",
            corr.dim()
        )));
    }
    Ok(corr)
}

/// A rejection rule with its thresholds fixed. Evaluating it on p-values or
/// on z-statistics gives the same decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Procedure {
    family: Family,
    gammas: Vec<f64>,
    z_crit: Vec<f64>,
}

impl Procedure {
    pub fn new(thresholds: &ThresholdSet) -> Self {
        Self {
            family: thresholds.mcc.family(),
            gammas: thresholds.gammas.clone(),
            z_crit: thresholds.z_critical(),
        }
    }

    pub fn k(&self) -> usize {
        self.gammas.len()
    }

    pub fn reject(&self, p: &[f64]) -> Result<Vec<bool>> {
        if p.len() != self.k() {
            return Err(Error::validation(
                "p",
                format!("expected {} p-values, got {}", self.k(), p.len()),
            ));
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("p", "p-values must lie in [0, 1]"));
        }
        let mask = self.decide(p, &self.gammas, |x, g| x <= g, |a, b| a < b);
        Ok((0..self.k()).map(|i| mask >> i & 1 == 1).collect())
    }

    /// Rejection bit mask for a vector of z-statistics (bit i set when H_i
    /// is rejected). `z.len()` must equal `k()`.
    #[inline]
    pub fn reject_z_mask(&self, z: &[f64]) -> u32 {
        self.decide(z, &self.z_crit, |x, c| x >= c, |a, b| a > b)
    }

    /// `passes(x, t)` says whether a statistic meets a threshold and
    /// `stronger(a, b)` orders statistics from most to least significant.
    #[inline]
    fn decide(
        &self,
        x: &[f64],
        thr: &[f64],
        passes: impl Fn(f64, f64) -> bool,
        stronger: impl Fn(f64, f64) -> bool,
    ) -> u32 {
        let k = x.len();
        match self.family {
            Family::Pher | Family::SingleStep => (0..k)
                .filter(|&i| passes(x[i], thr[i]))
                .fold(0, |m, i| m | 1 << i),
            Family::StepDown | Family::StepUp | Family::FdrStepUp => {
                // stable insertion sort of indices, most significant first
                let mut order = [0usize; 8];
                for i in 0..k {
                    let mut j = i;
                    while j > 0 && stronger(x[i], x[order[j - 1]]) {
                        order[j] = order[j - 1];
                        j -= 1;
                    }
                    order[j] = i;
                }
                let rejected = if self.family == Family::StepDown {
                    (0..k).find(|&r| !passes(x[order[r]], thr[r])).unwrap_or(k)
                } else {
                    (0..k).rev().find(|&r| passes(x[order[r]], thr[r])).map_or(0, |r| r + 1)
                };
                order[..rejected].iter().fold(0, |m, &i| m | 1 << i)
            }
        }
    }
}

/// Applies `thresholds` (which must belong to `mcc`) to a p-value vector.
pub fn apply(mcc: Mcc, p: &[f64], thresholds: &ThresholdSet) -> Result<Vec<bool>> {
    if thresholds.mcc != mcc {
        return Err(Error::Domain(format!(
            "thresholds were computed for {}, not {}",
            thresholds.mcc.id(),
            mcc.id()
        )));
    }
    Procedure::new(thresholds).reject(p)
}

/// The rejection rule for fixed thresholds as a reusable closure.
pub fn procedure_closure(thresholds: &ThresholdSet) -> impl Fn(&[f64]) -> Result<Vec<bool>> {
    let procedure = Procedure::new(thresholds);
    move |p| procedure.reject(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s() -> QmcSettings {
        QmcSettings::default()
    }

    /// Memoised: the Dunnett quantiles dominate property-test runtime.
    fn thr(mcc: Mcc, alpha: f64, k: usize) -> ThresholdSet {
        use std::collections::HashMap;
        use std::sync::{Mutex, OnceLock};
        static CACHE: OnceLock<Mutex<HashMap<(&'static str, u64, usize), ThresholdSet>>> = OnceLock::new();
        let key = (mcc.id(), alpha.to_bits(), k);
        let cache = CACHE.get_or_init(Default::default);
        if let Some(t) = cache.lock().unwrap().get(&key) {
            return t.clone();
        }
        let corr = CorrMatrix::exchangeable(k, 0.5).unwrap();
        let t = thresholds(mcc, alpha, k, Some(&corr), &s()).unwrap();
        cache.lock().unwrap().insert(key, t.clone());
        t
    }

    #[test]
    fn ids_round_trip() {
        for m in Mcc::ALL {
            assert_eq!(Mcc::from_id(m.id()), Some(m));
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.id()));
        }
    }

    #[test]
    fn closed_form_levels() {
        assert!((thr(Mcc::Bonferroni, 0.05, 5).gammas[0] - 0.01).abs() < 1e-15);
        assert!((thr(Mcc::Sidak, 0.15, 2).gammas[0] - (1.0 - 0.85f64.sqrt())).abs() < 1e-15);
        assert!((thr(Mcc::Sidak, 0.15, 2).gammas[0] - 0.078046).abs() < 1e-6);
        let by = thr(Mcc::BenjaminiYekutieli, 0.05, 3);
        assert!((by.gammas[1] - 0.1 / 5.5).abs() < 1e-15);
        assert!((by.gammas[1] - 0.018182).abs() < 1e-6);
        let holm = thr(Mcc::HolmBonferroni, 0.05, 4);
        assert_eq!(holm.gammas[0], thr(Mcc::Bonferroni, 0.05, 4).gammas[0]);
        assert_eq!(holm.gammas[3], 0.05);
        let hs = thr(Mcc::HolmSidak, 0.05, 3);
        assert!((hs.gammas[0] - (1.0 - 0.95f64.powf(1.0 / 3.0))).abs() < 1e-15);
        assert!((hs.gammas[2] - 0.05).abs() < 1e-15);
        assert!(hs.gammas.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn dunnett_between_sidak_and_alpha() {
        for rho in [0.3, 0.5, 0.7] {
            let corr = CorrMatrix::exchangeable(3, rho).unwrap();
            let b = thresholds(Mcc::Bonferroni, 0.05, 3, None, &s()).unwrap().gammas[0];
            let sd = thresholds(Mcc::Sidak, 0.05, 3, None, &s()).unwrap().gammas[0];
            let d = thresholds(Mcc::Dunnett, 0.05, 3, Some(&corr), &s()).unwrap().gammas[0];
            assert!(b <= sd && sd <= d && d < 0.05, "rho={rho}: {b} {sd} {d}");
        }
    }

    #[test]
    fn stepdown_dunnett_levels() {
        let t = thr(Mcc::StepdownDunnett, 0.05, 3);
        let single = thr(Mcc::Dunnett, 0.05, 3);
        assert!((t.gammas[0] - single.gammas[0]).abs() < 1e-8);
        assert!((t.gammas[2] - 0.05).abs() < 1e-12);
        assert!(t.gammas.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn stepdown_dunnett_needs_exchangeable() {
        let corr = CorrMatrix::new(vec![
            vec![1.0, 0.5, 0.4],
            vec![0.5, 1.0, 0.5],
            vec![0.4, 0.5, 1.0],
        ])
        .unwrap();
        let r = thresholds(Mcc::StepdownDunnett, 0.05, 3, Some(&corr), &s());
        assert!(matches!(r, Err(Error::Unsupported(_))));
        assert!(thresholds(Mcc::Dunnett, 0.05, 3, None, &s()).is_err());
    }

    #[test]
    fn holm_and_hochberg_by_hand() {
        let p = [0.001, 0.02, 0.9];
        let holm = thr(Mcc::HolmBonferroni, 0.05, 3);
        assert_eq!(apply(Mcc::HolmBonferroni, &p, &holm).unwrap(), vec![true, true, false]);
        let hoch = thr(Mcc::Hochberg, 0.05, 3);
        assert_eq!(apply(Mcc::Hochberg, &p, &hoch).unwrap(), vec![true, true, false]);
        // Holm stops at the first failure; Hochberg looks from the top
        let p = [0.03, 0.04, 0.045];
        assert_eq!(apply(Mcc::HolmBonferroni, &p, &holm).unwrap(), vec![false; 3]);
        assert_eq!(apply(Mcc::Hochberg, &p, &hoch).unwrap(), vec![true; 3]);
    }

    #[test]
    fn benjamini_hochberg_by_hand() {
        let t = thr(Mcc::BenjaminiHochberg, 0.1, 4);
        // γ = (0.025, 0.05, 0.075, 0.1); largest passing rank is 3
        let p = [0.07, 0.2, 0.01, 0.04];
        assert_eq!(
            apply(Mcc::BenjaminiHochberg, &p, &t).unwrap(),
            vec![true, false, true, true]
        );
    }

    #[test]
    fn k1_collapses() {
        for mcc in Mcc::ALL {
            let t = thr(mcc, 0.05, 1);
            assert!((t.gammas[0] - 0.05).abs() < 1e-9, "{mcc:?}");
            for p in [0.01, 0.049, 0.051, 0.5] {
                assert_eq!(apply(mcc, &[p], &t).unwrap(), vec![p <= 0.05]);
            }
        }
    }

    #[test]
    fn apply_errors() {
        let t = thr(Mcc::Bonferroni, 0.05, 2);
        assert!(apply(Mcc::Bonferroni, &[0.1], &t).is_err());
        assert!(apply(Mcc::Bonferroni, &[0.1, 1.2], &t).is_err());
        assert!(apply(Mcc::Sidak, &[0.1, 0.2], &t).is_err());
    }

    #[test]
    fn ties_are_stable() {
        let t = thr(Mcc::HolmBonferroni, 0.05, 3);
        // γ₁ = 0.0167, γ₂ = 0.025: tied p-values at 0.02; the earlier arm takes rank 1
        let r = apply(Mcc::HolmBonferroni, &[0.02, 0.02, 0.5], &t).unwrap();
        assert_eq!(r, vec![false, false, false]);
        let r = apply(Mcc::HolmBonferroni, &[0.01, 0.02, 0.02], &t).unwrap();
        assert_eq!(r, vec![true, true, true]);
    }

    fn p_vec(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..=1.0, k)
    }

    proptest! {
        #[test]
        fn closure_matches_apply(p in p_vec(4)) {
            for mcc in Mcc::ALL {
                let t = thr(mcc, 0.1, 4);
                let f = procedure_closure(&t);
                prop_assert_eq!(f(&p).unwrap(), apply(mcc, &p, &t).unwrap());
                prop_assert_eq!(f(&p).unwrap(), f(&p).unwrap());
            }
        }

        #[test]
        fn none_is_unadjusted(p in p_vec(5)) {
            let t = thr(Mcc::None, 0.05, 5);
            let expected: Vec<bool> = p.iter().map(|&v| v <= 0.05).collect();
            prop_assert_eq!(procedure_closure(&t)(&p).unwrap(), expected);
        }

        #[test]
        fn z_and_p_agree(z in proptest::collection::vec(-4.0f64..4.0, 4)) {
            let p: Vec<f64> = z.iter().map(|&v| phi(-v)).collect();
            for mcc in Mcc::ALL {
                let t = thr(mcc, 0.1, 4);
                let proc_ = Procedure::new(&t);
                let by_p = proc_.reject(&p).unwrap();
                let mask = proc_.reject_z_mask(&z);
                let by_z: Vec<bool> = (0..4).map(|i| mask >> i & 1 == 1).collect();
                prop_assert_eq!(by_p, by_z);
            }
        }

        #[test]
        fn decreasing_a_p_value_keeps_rejections(p in p_vec(4), idx in 0usize..4, f in 0.0f64..1.0) {
            for mcc in Mcc::ALL {
                let t = thr(mcc, 0.2, 4);
                let before = apply(mcc, &p, &t).unwrap();
                let mut q = p.clone();
                q[idx] *= f;
                let after = apply(mcc, &q, &t).unwrap();
                for i in 0..4 {
                    prop_assert!(!before[i] || after[i], "{:?} lost rejection {}", mcc, i);
                }
            }
        }

        #[test]
        fn rejection_ladders(p in p_vec(5)) {
            let bonf = apply(Mcc::Bonferroni, &p, &thr(Mcc::Bonferroni, 0.1, 5)).unwrap();
            let holm = apply(Mcc::HolmBonferroni, &p, &thr(Mcc::HolmBonferroni, 0.1, 5)).unwrap();
            let hoch = apply(Mcc::Hochberg, &p, &thr(Mcc::Hochberg, 0.1, 5)).unwrap();
            for i in 0..5 {
                prop_assert!(!bonf[i] || holm[i]);
                prop_assert!(!holm[i] || hoch[i]);
            }
        }
    }
}
