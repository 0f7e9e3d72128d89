//! Univariate standard normal distribution.

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `Φ(x)` without input checking. Infinite arguments map to 0 and 1.
#[inline]
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal CDF. Errors on NaN or infinite input.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("normal cdf argument {x} is not finite")));
    }
    Ok(phi(x))
}

/// Standard normal quantile for `p` in the open unit interval.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs p in (0,1), got {p}")));
    }
    Ok(phi_inv(p))
}

/// Inverse of [`phi`] without input checking: 0 and 1 give -inf and +inf.
///
/// Wichura's AS 241 (PPND16) followed by one Halley step against `erfc`,
/// which brings the result to full double precision across the whole range.
pub fn phi_inv(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = ppnd16(p);
    if !x.is_finite() {
        return x;
    }
    let u = (phi(x) - p) / std_normal_pdf(x);
    if !u.is_finite() {
        return x;
    }
    x - u / (1.0 + 0.5 * x * u)
}

fn ppnd16(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
                + 67265.770_927_008_700)
                * r
                + 45921.953_931_549_871)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5226.495_278_852_545_5 * r + 28729.085_735_721_943) * r
                + 39307.895_800_092_710)
                * r
                + 21213.794_301_586_595)
                * r
                + 5394.196_021_424_751_1)
                * r
                + 687.187_007_492_057_91)
                * r
                + 42.313_330_701_600_911)
                * r
                + 1.0);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414_1e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_61)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691_4)
            * r
            + 4.630_337_846_156_545_3)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_344_9e-4)
                * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_07)
                * r
                + 0.689_767_334_985_100_05)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_758_8)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_123)
            * r
            + 0.296_560_571_828_504_89)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114_4)
            * r
            + 6.657_904_643_501_103_8)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_445_9e-7)
                * r
                + 1.846_318_317_510_054_7e-5)
                * r
                + 7.868_691_311_456_132_6e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_81)
                * r
                + 0.599_832_206_555_887_94)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series for erf, summed in high precision terms; converges
    /// quickly for |x| < 3 and is independent of libm.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-20 * sum.abs() {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    #[test]
    fn cdf_reference_points() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        assert!((std_normal_cdf(40.0).unwrap() - 1.0).abs() <= 1e-15);
        let x = 1.959964;
        let oracle = 0.5 * (1.0 + erf_series(x / 2f64.sqrt()));
        assert!((std_normal_cdf(x).unwrap() - oracle).abs() < 1e-13);
        assert!((std_normal_cdf(x).unwrap() - 0.975).abs() < 1e-6);
        for i in -30..=30 {
            let x = i as f64 / 10.0;
            let oracle = 0.5 * (1.0 + erf_series(x / 2f64.sqrt()));
            assert!((phi(x) - oracle).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn cdf_rejects_non_finite() {
        assert!(std_normal_cdf(f64::NAN).is_err());
        assert!(std_normal_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn quantile_reference_points() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        // bisection on the cdf as an oracle
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) < 0.975 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let q = std_normal_quantile(0.975).unwrap();
        assert!((q - lo).abs() < 1e-12);
        assert!((q - 1.959964).abs() < 1e-5);
    }

    #[test]
    fn quantile_deep_tail() {
        let q = std_normal_quantile(1e-300).unwrap();
        assert!(q.is_finite() && q < 0.0);
        let back = phi(q);
        assert!(((back - 1e-300) / 1e-300).abs() < 1e-8);
    }

    #[test]
    fn quantile_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(std_normal_quantile(p).is_err());
        }
    }

    #[test]
    fn quantile_round_trip() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let x = std_normal_quantile(p).unwrap();
            assert!((phi(x) - p).abs() < 1e-10);
        }
        for e in 1..300 {
            let p = 10f64.powi(-e);
            let x = phi_inv(p);
            assert!(((phi(x) - p) / p).abs() < 1e-8, "p=1e-{e}");
            let x = phi_inv(1.0 - p);
            if p > 1e-15 {
                assert!((phi(x) - (1.0 - p)).abs() < 1e-15);
            }
        }
    }
}
