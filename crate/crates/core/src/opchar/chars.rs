use serde::{Deserialize, Serialize};

use super::RejectionPmf;
use crate::error::{Error, Result};

/// Markers for quantities whose definition degenerates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpCharFlags {
    /// No false nulls: sensitivity reported as 1.
    pub sensitivity_vacuous: bool,
    /// No true nulls: specificity reported as 1.
    pub specificity_vacuous: bool,
    /// P(R > 0) = 0, so pFDR is undefined.
    pub pfdr_undefined: bool,
}

/// The eleven operating characteristics for one truth scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpChars {
    pub p_con: f64,
    pub p_dis: f64,
    pub p_marginal: Vec<f64>,
    pub pher: f64,
    /// `fwer_i[a-1]` = P(at least a type-I errors).
    pub fwer_i: Vec<f64>,
    /// `fwer_ii[a-1]` = P(at least a type-II errors).
    pub fwer_ii: Vec<f64>,
    pub fdr: f64,
    pub fndr: f64,
    pub pfdr: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub flags: OpCharFlags,
}

/// One scalar of an [`OpChars`], for tables, CSV output and comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCharEntry {
    pub quantity: String,
    /// 1-based arm for marginal powers.
    pub arm: Option<usize>,
    pub value: Option<f64>,
}

impl OpChars {
    pub fn entries(&self) -> Vec<OpCharEntry> {
        let scalar = |q: &str, v: f64| OpCharEntry {
            quantity: q.to_string(),
            arm: None,
            value: Some(v),
        };
        let mut out = vec![scalar("p_con", self.p_con), scalar("p_dis", self.p_dis)];
        out.extend(self.p_marginal.iter().enumerate().map(|(k, &v)| OpCharEntry {
            quantity: "p_marginal".into(),
            arm: Some(k + 1),
            value: Some(v),
        }));
        out.push(scalar("pher", self.pher));
        out.extend(self.fwer_i.iter().enumerate().map(|(a, &v)| scalar(&format!("fwer_I{}", a + 1), v)));
        out.extend(self.fwer_ii.iter().enumerate().map(|(a, &v)| scalar(&format!("fwer_II{}", a + 1), v)));
        out.push(scalar("fdr", self.fdr));
        out.push(scalar("fndr", self.fndr));
        out.push(OpCharEntry {
            quantity: "pfdr".into(),
            arm: None,
            value: self.pfdr,
        });
        out.push(scalar("sensitivity", self.sensitivity));
        out.push(scalar("specificity", self.specificity));
        out
    }

    /// Largest absolute difference over quantities defined in both.
    pub fn max_abs_diff(&self, other: &OpChars) -> f64 {
        self.entries()
            .iter()
            .zip(other.entries())
            .filter_map(|(a, b)| Some((a.value? - b.value?).abs()))
            .fold(0.0, f64::max)
    }
}

/// Per-outcome summary counts used by every expectation below.
struct Counts {
    v: u32,
    t: u32,
    r: u32,
    type_ii: u32,
}

fn counts(mask: u32, false_mask: u32, k: usize) -> Counts {
    let all = (1u32 << k) - 1;
    let v = (mask & !false_mask & all).count_ones();
    let t = (mask & false_mask).count_ones();
    Counts {
        v,
        t,
        r: v + t,
        type_ii: (!mask & false_mask & all).count_ones(),
    }
}

/// Operating characteristics as expectations over the rejection pmf.
/// `false_nulls[k]` is true when H_{k+1} is false.
pub fn opchars_from_pmf(pmf: &RejectionPmf, false_nulls: &[bool]) -> Result<OpChars> {
    let k = pmf.k;
    if false_nulls.len() != k || pmf.probs.len() != 1 << k {
        return Err(Error::Domain(format!(
            "truth vector of length {} for a {k}-arm pmf",
            false_nulls.len()
        )));
    }
    let false_mask = false_nulls
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .fold(0u32, |m, (i, _)| m | 1 << i);
    let m1 = false_mask.count_ones() as f64;
    let m0 = k as f64 - m1;

    let mut oc = OpChars {
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
        flags: OpCharFlags::default(),
    };
    let (mut any_rejection, mut pfdr_num) = (0.0, 0.0);
    let (mut expected_v, mut expected_t, mut expected_tn) = (0.0, 0.0, 0.0);
    for (mask, p) in pmf.iter() {
        if p == 0.0 {
            continue;
        }
        let c = counts(mask, false_mask, k);
        if c.r as usize == k {
            oc.p_con += p;
        }
        if c.r > 0 {
            oc.p_dis += p;
            any_rejection += p;
            let share = c.v as f64 / c.r as f64;
            oc.fdr += p * share;
            pfdr_num += p * share;
        }
        for i in 0..k {
            if mask >> i & 1 == 1 {
                oc.p_marginal[i] += p;
            }
        }
        for a in 1..=k as u32 {
            if c.v >= a {
                oc.fwer_i[a as usize - 1] += p;
            }
            if c.type_ii >= a {
                oc.fwer_ii[a as usize - 1] += p;
            }
        }
        let not_rejected = k as u32 - c.r;
        if not_rejected > 0 {
            oc.fndr += p * c.type_ii as f64 / not_rejected as f64;
        }
        expected_v += p * c.v as f64;
        expected_t += p * c.t as f64;
        expected_tn += p * (m0 - c.v as f64);
    }
    oc.pher = expected_v / k as f64;
    if any_rejection > 0.0 {
        oc.pfdr = Some(pfdr_num / any_rejection);
    } else {
        oc.flags.pfdr_undefined = true;
    }
    if m1 > 0.0 {
        oc.sensitivity = expected_t / m1;
    } else {
        oc.sensitivity = 1.0;
        oc.flags.sensitivity_vacuous = true;
    }
    if m0 > 0.0 {
        oc.specificity = expected_tn / m0;
    } else {
        oc.specificity = 1.0;
        oc.flags.specificity_vacuous = true;
    }
    Ok(oc)
}

#[cfg(test)]
mod tests {
    use super::super::PmfMethod;
    use super::*;

    fn pmf(probs: Vec<f64>) -> RejectionPmf {
        let k = probs.len().trailing_zeros() as usize;
        RejectionPmf {
            k,
            probs,
            method: PmfMethod::AnalyticBox,
            error_estimate: 0.0,
        }
    }

    #[test]
    fn global_null_identities() {
        let p = pmf(vec![0.9, 0.03, 0.04, 0.03]);
        let oc = opchars_from_pmf(&p, &[false, false]).unwrap();
        assert_eq!(oc.fdr, oc.fwer_i[0]);
        assert_eq!(oc.pfdr, Some(1.0));
        assert_eq!(oc.fwer_ii, vec![0.0, 0.0]);
        assert!(oc.flags.sensitivity_vacuous);
        assert_eq!(oc.sensitivity, 1.0);
    }

    #[test]
    fn global_alternative_identities() {
        let p = pmf(vec![0.1, 0.2, 0.15, 0.55]);
        let oc = opchars_from_pmf(&p, &[true, true]).unwrap();
        assert_eq!(oc.fwer_i, vec![0.0, 0.0]);
        assert_eq!(oc.pher, 0.0);
        assert_eq!(oc.specificity, 1.0);
        assert!(oc.flags.specificity_vacuous);
    }

    #[test]
    fn undefined_pfdr() {
        let p = pmf(vec![1.0, 0.0, 0.0, 0.0]);
        let oc = opchars_from_pmf(&p, &[true, false]).unwrap();
        assert_eq!(oc.pfdr, None);
        assert!(oc.flags.pfdr_undefined);
    }

    /// Hand enumeration of a K = 2 pmf with H_1 false and H_2 true.
    #[test]
    fn enumeration_oracle() {
        // ψ = 00, 10 (H1 only), 01 (H2 only), 11
        let (p00, p10, p01, p11) = (0.15, 0.62, 0.03, 0.2);
        // bit 0 = H1, bit 1 = H2
        let p = pmf(vec![p00, p10, p01, p11]);
        let oc = opchars_from_pmf(&p, &[true, false]).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        assert!(close(oc.p_con, p11));
        assert!(close(oc.p_dis, p10 + p01 + p11));
        assert!(close(oc.p_marginal[0], p10 + p11));
        assert!(close(oc.p_marginal[1], p01 + p11));
        // V = rejections of H2
        assert!(close(oc.pher, (p01 + p11) / 2.0));
        assert!(close(oc.fwer_i[0], p01 + p11));
        assert!(close(oc.fwer_i[1], 0.0));
        // type II = H1 not rejected
        assert!(close(oc.fwer_ii[0], p00 + p01));
        assert!(close(oc.fwer_ii[1], 0.0));
        // V/R: ψ=01 → 1, ψ=11 → 1/2
        assert!(close(oc.fdr, p01 + 0.5 * p11));
        // type II / (K − R): ψ=00 → 1/2, ψ=01 → 1
        assert!(close(oc.fndr, 0.5 * p00 + p01));
        let pr = p10 + p01 + p11;
        assert!(close(oc.pfdr.unwrap(), (p01 + 0.5 * p11) / pr));
        assert!(close(oc.sensitivity, p10 + p11));
        assert!(close(oc.specificity, p00 + p10));
    }

    #[test]
    fn entries_cover_all_quantities() {
        let p = pmf(vec![0.25; 4]);
        let oc = opchars_from_pmf(&p, &[true, false]).unwrap();
        let e = oc.entries();
        // p_con, p_dis, 2 marginals, pher, 2+2 fwer, fdr, fndr, pfdr, sens, spec
        assert_eq!(e.len(), 14);
        assert_eq!(oc.max_abs_diff(&oc), 0.0);
    }
}
