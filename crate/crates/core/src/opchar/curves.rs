use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{opchars_from_pmf, OpChars, PmfEvaluator};
use crate::corrections::ThresholdSet;
use crate::error::{Error, Result};
use crate::mvn::QmcSettings;
use crate::outcome::{z_law, EffectScenario, Effects, OutcomeKind, OutcomeModel, SampleSizes};

pub const DEFAULT_QUALITY: usize = 100;
pub const MIN_QUALITY: usize = 10;
pub const MAX_QUALITY: usize = 500;
/// Closest a plotted response rate may come to 0 or 1.
const CLIP_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLines {
    pub alpha: f64,
    /// 1 − β.
    pub power: f64,
    pub delta1: f64,
    pub delta0: f64,
}

/// Operating characteristics along a grid of effects θ.
///
/// Series (a) sets every τ_k = θ. Series (b) gives, for each arm k, the
/// marginal power P_k when τ_k = θ and every other τ_l = θ − (δ₁ − δ₀).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveData {
    pub theta: Vec<f64>,
    pub equal_effects: Vec<OpChars>,
    /// `shifted_marginal[i][k]` is P_{k+1} at `theta[i]`.
    pub shifted_marginal: Vec<Vec<f64>>,
    pub reference_lines: ReferenceLines,
}

impl CurveData {
    /// Long-format CSV: `theta,quantity,arm,value,series`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,quantity,arm,value,series\n");
        for (theta, oc) in self.theta.iter().zip(&self.equal_effects) {
            for e in oc.entries() {
                let arm = e.arm.map(|a| a.to_string()).unwrap_or_default();
                let value = e.value.map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!("{theta},{},{arm},{value},a\n", e.quantity));
            }
        }
        for (theta, powers) in self.theta.iter().zip(&self.shifted_marginal) {
            for (k, p) in powers.iter().enumerate() {
                out.push_str(&format!("{theta},p_marginal,{},{p},b\n", k + 1));
            }
        }
        out
    }
}

/// Evenly spaced grid over [min(0, δ₀) − Δ/2, δ₁ + Δ] with Δ = δ₁ − δ₀, cut
/// so that every response rate in either series stays inside (0, 1), and
/// with the grid points nearest 0, δ₀ and δ₁ moved onto those values.
pub fn theta_grid(model: &OutcomeModel, delta1: f64, delta0: f64, quality: usize) -> Result<Vec<f64>> {
    if !(MIN_QUALITY..=MAX_QUALITY).contains(&quality) {
        return Err(Error::validation(
            "plot.quality",
            format!("must lie in [{MIN_QUALITY}, {MAX_QUALITY}], got {quality}"),
        ));
    }
    let gap = delta1 - delta0;
    let mut lo = delta0.min(0.0) - gap / 2.0;
    let mut hi = delta1 + gap;
    if let OutcomeKind::Bernoulli { pi0 } = model.kind {
        lo = lo.max(-pi0 + gap + CLIP_MARGIN);
        hi = hi.min(1.0 - pi0 - CLIP_MARGIN);
    }
    if !(lo < hi) {
        return Err(Error::validation(
            "plot",
            "no effect values keep every response rate inside (0, 1)",
        ));
    }
    let step = (hi - lo) / (quality - 1) as f64;
    let mut grid: Vec<f64> = (0..quality).map(|i| lo + step * i as f64).collect();
    grid[quality - 1] = hi;
    let mut snapped = vec![false; quality];
    for target in [delta1, delta0, 0.0] {
        if target < lo || target > hi {
            continue;
        }
        let i = (((target - lo) / step).round() as usize).min(quality - 1);
        if !snapped[i] {
            grid[i] = target;
            snapped[i] = true;
        }
    }
    Ok(grid)
}

fn scenario(model: &OutcomeModel, tau: Vec<f64>) -> EffectScenario {
    EffectScenario::custom(match model.kind {
        OutcomeKind::Normal { .. } => Effects::Tau(tau),
        OutcomeKind::Bernoulli { pi0 } => {
            Effects::Pi(std::iter::once(pi0).chain(tau.iter().map(|t| pi0 + t)).collect())
        }
    })
}

/// Plot data for the design defined by `sizes` and `thresholds`.
pub fn curves(
    model: &OutcomeModel,
    sizes: &SampleSizes,
    thresholds: &ThresholdSet,
    lines: ReferenceLines,
    quality: usize,
    settings: &QmcSettings,
) -> Result<CurveData> {
    let theta = theta_grid(model, lines.delta1, lines.delta0, quality)?;
    let k = model.k;
    let gap = lines.delta1 - lines.delta0;
    let eval = PmfEvaluator::new(thresholds, settings)?;
    let points: Vec<(OpChars, Vec<f64>)> = theta
        .par_iter()
        .map(|&t| {
            let equal = scenario(model, vec![t; k]);
            let pmf = eval.pmf(&z_law(model, sizes, &equal)?)?;
            let oc = opchars_from_pmf(&pmf, &equal.false_nulls())?;
            let shifted = (0..k)
                .map(|arm| {
                    let tau = (0..k).map(|j| if j == arm { t } else { t - gap }).collect();
                    let pmf = eval.pmf(&z_law(model, sizes, &scenario(model, tau))?)?;
                    Ok(pmf.iter().filter(|(m, _)| m >> arm & 1 == 1).map(|(_, p)| p).sum())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((oc, shifted))
        })
        .collect::<Result<_>>()?;
    let (equal_effects, shifted_marginal) = points.into_iter().unzip();
    Ok(CurveData {
        theta,
        equal_effects,
        shifted_marginal,
        reference_lines: lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrections::{thresholds, Mcc};
    use crate::opchar::outcome_pmf;
    use crate::outcome::named_scenarios;

    fn lines() -> ReferenceLines {
        ReferenceLines {
            alpha: 0.05,
            power: 0.8,
            delta1: 0.5,
            delta0: 0.1,
        }
    }

    #[test]
    fn grid_contains_reference_effects() {
        let model = OutcomeModel::normal_equal(2, 1.0).unwrap();
        let g = theta_grid(&model, 0.5, 0.1, 100).unwrap();
        assert_eq!(g.len(), 100);
        for v in [0.0, 0.1, 0.5] {
            assert!(g.contains(&v), "{v}");
        }
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!((g[0] - (-0.2)).abs() < 1e-12);
        assert!((g[99] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_grid_is_clipped() {
        let model = OutcomeModel::bernoulli(2, 0.8).unwrap();
        let g = theta_grid(&model, 0.15, 0.0, 50).unwrap();
        let gap = 0.15;
        for &t in &g {
            assert!(0.8 + t < 1.0 && 0.8 + t - gap > 0.0);
        }
        assert!(*g.last().unwrap() <= 0.2 - CLIP_MARGIN + 1e-12);
    }

    #[test]
    fn quality_bounds() {
        let model = OutcomeModel::normal_equal(1, 1.0).unwrap();
        assert!(theta_grid(&model, 0.5, 0.0, 9).unwrap_err().is_validation());
        assert!(theta_grid(&model, 0.5, 0.0, 501).unwrap_err().is_validation());
    }

    #[test]
    fn grid_points_match_named_scenarios() {
        let model = OutcomeModel::normal_equal(2, 1.0).unwrap();
        let s = QmcSettings::default();
        let sizes = SampleSizes::from_ratios(40.0, &[1.0, 1.0]);
        let t = thresholds(Mcc::Bonferroni, 0.05, 2, None, &s).unwrap();
        let c = curves(&model, &sizes, &t, lines(), 20, &s).unwrap();
        let named = named_scenarios(&model, 0.5, 0.1).unwrap();
        let at = |v: f64| c.theta.iter().position(|&x| x == v).unwrap();
        let ha = &named[1];
        let pmf = outcome_pmf(&z_law(&model, &sizes, ha).unwrap(), &t, &s).unwrap();
        let oc = opchars_from_pmf(&pmf, &ha.false_nulls()).unwrap();
        assert!(c.equal_effects[at(0.5)].max_abs_diff(&oc) < 1e-9);
        for arm in 0..2 {
            let lfc = &named[2 + arm];
            let pmf = outcome_pmf(&z_law(&model, &sizes, lfc).unwrap(), &t, &s).unwrap();
            let oc = opchars_from_pmf(&pmf, &lfc.false_nulls()).unwrap();
            assert!((c.shifted_marginal[at(0.5)][arm] - oc.p_marginal[arm]).abs() < 1e-9);
        }
        // symmetric design
        for p in &c.shifted_marginal {
            assert!((p[0] - p[1]).abs() < 1e-5);
        }
        for w in c.equal_effects.windows(2) {
            for k in 0..2 {
                assert!(w[1].p_marginal[k] >= w[0].p_marginal[k] - 1e-6);
            }
        }
    }

    #[test]
    fn csv_rows() {
        let model = OutcomeModel::normal_equal(2, 1.0).unwrap();
        let s = QmcSettings::default();
        let sizes = SampleSizes::from_ratios(40.0, &[1.0, 1.0]);
        let t = thresholds(Mcc::HolmBonferroni, 0.05, 2, None, &s).unwrap();
        let c = curves(&model, &sizes, &t, lines(), 10, &s).unwrap();
        let csv = c.to_csv();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "theta,quantity,arm,value,series");
        let count = |q: &str, series: &str| {
            rows.iter()
                .filter(|r| {
                    let f: Vec<&str> = r.split(',').collect();
                    f[1] == q && f[4] == series
                })
                .count()
        };
        assert_eq!(count("fdr", "a"), 10);
        assert_eq!(count("p_marginal", "a"), 20);
        assert_eq!(count("p_marginal", "b"), 20);
    }
}
