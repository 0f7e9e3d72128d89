//! Bivariate normal upper-orthant probabilities (Drezner–Wesolowsky with
//! Genz's refinements), accurate to about 1e-15.

use std::f64::consts::PI;

use crate::normal::phi;

const W6: [f64; 3] = [0.171_324_492_379_170_5, 0.360_761_573_048_138_4, 0.467_913_934_572_690_4];
const X6: [f64; 3] = [0.932_469_514_203_152_2, 0.661_209_386_466_264_7, 0.238_619_186_083_197_0];
const W12: [f64; 6] = [
    0.047_175_336_386_511_77,
    0.106_939_325_995_318_3,
    0.160_078_328_543_346_4,
    0.203_167_426_723_065_9,
    0.233_492_536_538_354_7,
    0.249_147_045_813_402_9,
];
const X12: [f64; 6] = [
    0.981_560_634_246_719_1,
    0.904_117_256_370_475_0,
    0.769_902_674_194_305_0,
    0.587_317_954_286_617_1,
    0.367_831_498_998_180_2,
    0.125_233_408_511_469_2,
];
const W20: [f64; 10] = [
    0.017_614_007_139_152_12,
    0.040_601_429_800_386_94,
    0.062_672_048_334_109_06,
    0.083_276_741_576_704_75,
    0.101_930_119_817_240_4,
    0.118_194_531_961_518_4,
    0.131_688_638_449_176_6,
    0.142_096_109_318_382_1,
    0.149_172_986_472_603_7,
    0.152_753_387_130_725_9,
];
const X20: [f64; 10] = [
    0.993_128_599_185_094_9,
    0.963_971_927_277_913_8,
    0.912_234_428_251_325_9,
    0.839_116_971_822_218_8,
    0.746_331_906_460_150_8,
    0.636_053_680_726_515_0,
    0.510_867_001_950_827_1,
    0.373_706_088_715_419_6,
    0.227_785_851_141_645_1,
    0.076_526_521_133_497_33,
];

/// `P(X > h, Y > k)` for standard bivariate normal `(X, Y)` with
/// correlation `r`.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY { 1.0 } else { phi(-k) };
    }
    if k == f64::NEG_INFINITY {
        return phi(-h);
    }
    if r == 0.0 {
        return phi(-h) * phi(-k);
    }
    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&W6, &X6)
    } else if r.abs() < 0.75 {
        (&W12, &X12)
    } else {
        (&W20, &X20)
    };
    // nodes 1 ± x on [0, 2]
    let nodes = || w.iter().zip(x).flat_map(|(&wi, &xi)| [(wi, 1.0 - xi), (wi, 1.0 + xi)]);
    let tp = 2.0 * PI;
    let (h, mut k) = (h, k);
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin() / 2.0;
        let sum: f64 = nodes()
            .map(|(wi, xi)| {
                let sn = (asr * xi).sin();
                wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp()
            })
            .sum();
        return (sum * asr / tp + phi(-h) * phi(-k)).clamp(0.0, 1.0);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let as_ = 1.0 - r * r;
        let mut a = as_.sqrt();
        let bs = (h - k).powi(2);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 80.0;
        let asr = -(bs / as_ + hk) / 2.0;
        if asr > -100.0 {
            bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
        }
        if hk > -100.0 {
            let b = bs.sqrt();
            let sp = tp.sqrt() * phi(-b / a);
            bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
        }
        a /= 2.0;
        let sum: f64 = nodes()
            .filter_map(|(wi, xi)| {
                let xs = (a * xi).powi(2);
                let asr = -(bs / xs + hk) / 2.0;
                (asr > -100.0).then(|| {
                    let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                    let rs = (1.0 - xs).sqrt();
                    let ep = (-(hk / 2.0) * xs / (1.0 + rs).powi(2)).exp() / rs;
                    wi * asr.exp() * (sp - ep)
                })
            })
            .sum();
        bvn = (a * sum - bvn) / tp;
    }
    if r > 0.0 {
        bvn += phi(-h.max(k));
    } else if h >= k {
        bvn = -bvn;
    } else {
        let l = if h < 0.0 { phi(k) - phi(h) } else { phi(-h) - phi(-k) };
        bvn = l - bvn;
    }
    bvn.clamp(0.0, 1.0)
}

/// `P(a₁ < X ≤ b₁, a₂ < Y ≤ b₂)` for standard bivariate normal `(X, Y)`.
pub fn bvn_rectangle(a: [f64; 2], b: [f64; 2], r: f64) -> f64 {
    let p = bvn_upper(a[0], a[1], r) - bvn_upper(b[0], a[1], r) - bvn_upper(a[0], b[1], r)
        + bvn_upper(b[0], b[1], r);
    p.clamp(0.0, 1.0)
}

/// The four cells of `{X > h}` × `{Y > k}`, indexed by bit 0 for `X > h`
/// and bit 1 for `Y > k`. Each is computed directly, without subtraction.
pub fn bvn_cells(h: f64, k: f64, r: f64) -> [f64; 4] {
    [
        bvn_upper(-h, -k, r),
        bvn_upper(h, -k, -r),
        bvn_upper(-h, k, -r),
        bvn_upper(h, k, r),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::std_normal_pdf;

    /// P(X > h, Y > k) as ∫_h^∞ φ(x) Φ((ρx − k)/√(1−ρ²)) dx by composite
    /// Simpson on a truncated range.
    fn oracle(h: f64, k: f64, r: f64) -> f64 {
        let lo = h.max(-12.0);
        let hi = 12.0f64;
        if lo >= hi {
            return 0.0;
        }
        let n = 200_000;
        let step = (hi - lo) / n as f64;
        let s = (1.0 - r * r).sqrt();
        let f = |x: f64| std_normal_pdf(x) * phi((r * x - k) / s);
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            acc += f(lo + step * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * step / 3.0
    }

    #[test]
    fn matches_quadrature_across_branches() {
        for &r in &[-0.99, -0.95, -0.8, -0.5, -0.1, 0.1, 0.29, 0.5, 0.74, 0.8, 0.93, 0.99] {
            for &(h, k) in &[(0.0, 0.0), (1.3, -0.4), (-2.0, 1.0), (2.5, 2.5), (-1.0, -3.0), (0.7, 0.71)] {
                let got = bvn_upper(h, k, r);
                let want = oracle(h, k, r);
                assert!((got - want).abs() < 1e-12, "h={h} k={k} r={r}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn orthant_closed_form() {
        for r in [-0.9f64, -0.3, 0.2, 0.5, 0.95] {
            let want = 0.25 + r.asin() / (2.0 * PI);
            assert!((bvn_upper(0.0, 0.0, r) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_correlation() {
        assert!((bvn_upper(0.5, 1.0, 1.0) - phi(-1.0)).abs() < 1e-15);
        assert!((bvn_upper(0.5, -1.0, -1.0) - (phi(1.0) - phi(0.5))).abs() < 1e-15);
        assert_eq!(bvn_upper(0.5, 1.0, -1.0), 0.0);
    }

    #[test]
    fn cells_sum_to_one() {
        for r in [-0.97, -0.4, 0.0, 0.6, 0.97] {
            let c = bvn_cells(0.8, -1.1, r);
            assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!((c[1] + c[3] - phi(-0.8)).abs() < 1e-14);
        }
    }
}
