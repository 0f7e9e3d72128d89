//! Genz-style sequential conditioning integrated with randomized QMC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corr::DEGENERATE_VAR;
use super::bvn::{bvn_cells, bvn_rectangle};
use super::qmc::ShiftedLattice;
use super::{CorrMatrix, QmcSettings, MAX_DIM};
use crate::error::{Error, Result};
use crate::normal::{phi, phi_inv, std_normal_pdf};

const START_POINTS_LOG2: u32 = 10;
const Y_CLAMP: f64 = 38.0;

/// A probability together with its error estimate (three standard errors
/// across randomizations; zero for exact evaluations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvnEstimate {
    pub value: f64,
    pub error: f64,
}

impl MvnEstimate {
    fn exact(value: f64) -> Self {
        Self { value, error: 0.0 }
    }
}

/// `P(lower < X ≤ upper)` for `X ~ MVN(mean, corr)`.
///
/// Unconstrained coordinates are marginalised out, dimension one is
/// evaluated exactly, and everything else goes through the sequential
/// conditioning transform with variables ordered by smallest expected
/// interval probability.
pub fn mvn_rectangle(
    lower: &[f64],
    upper: &[f64],
    mean: &[f64],
    corr: &CorrMatrix,
    settings: &QmcSettings,
) -> Result<MvnEstimate> {
    settings.validate()?;
    let n = corr.dim();
    if lower.len() != n || upper.len() != n || mean.len() != n {
        return Err(Error::Domain(format!(
            "bounds and mean must have length {n}"
        )));
    }
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::Domain("mean must be finite".into()));
    }
    let mut keep = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = (lower[i], upper[i]);
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Domain(format!("invalid bounds at coordinate {i}")));
        }
        if lo == hi {
            return Ok(MvnEstimate::exact(0.0));
        }
        if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
            continue;
        }
        keep.push(i);
        a.push(lo - mean[i]);
        b.push(hi - mean[i]);
    }
    if keep.is_empty() {
        return Ok(MvnEstimate::exact(1.0));
    }
    if keep.len() == 1 {
        return Ok(MvnEstimate::exact(interval(a[0], b[0]).0));
    }
    let sub = corr.select(&keep)?;
    if keep.len() == 2 {
        return Ok(MvnEstimate::exact(bvn_rectangle([a[0], a[1]], [b[0], b[1]], sub.get(0, 1))));
    }
    let prepared = Reordered::new(a, b, &sub);
    let nvar = prepared.n;
    let (values, error) = adaptive_qmc(settings, 0x5245_4354, nvar - 1, 1, |w, out| {
        out[0] += prepared.integrand(w)
    });
    Ok(MvnEstimate {
        value: values[0].clamp(0.0, 1.0),
        error,
    })
}

/// Probabilities of all `2^K` cells `{Z_k > thresholds_k for k in ψ,
/// Z_k ≤ thresholds_k otherwise}` for `Z ~ MVN(mean, corr)`, indexed by
/// the bit mask ψ. Every quasi-random point contributes weights summing to
/// one, so the returned vector is normalised up to rounding.
pub fn orthant_cells(
    thresholds: &[f64],
    mean: &[f64],
    corr: &CorrMatrix,
    settings: &QmcSettings,
) -> Result<(Vec<f64>, f64)> {
    settings.validate()?;
    let n = corr.dim();
    if thresholds.len() != n || mean.len() != n {
        return Err(Error::Domain(format!(
            "thresholds and mean must have length {n}"
        )));
    }
    if thresholds.iter().chain(mean).any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN threshold or mean".into()));
    }
    let tree = OrthantTree {
        n,
        l: corr.cholesky_semidefinite(),
        t: thresholds.iter().zip(mean).map(|(c, m)| c - m).collect(),
    };
    if n == 1 {
        let z = tree.t[0];
        return Ok((vec![phi(z), phi(-z)], 0.0));
    }
    if n == 2 {
        let mut cells = vec![0.0; 4];
        tree.descend(0, 1.0, 0, &mut [0.0; MAX_DIM], &[], &mut cells);
        return Ok((cells, 0.0));
    }
    let (mut cells, error) = adaptive_qmc(settings, 0x4f52_5448, n - 2, 1 << n, |w, out| {
        let mut y = [0.0; MAX_DIM];
        tree.descend(0, 1.0, 0, &mut y, w, out);
    });
    cells.iter_mut().for_each(|p| *p = p.max(0.0));
    Ok((cells, error))
}

/// Probability of `(at, bt]` under N(0,1), computed on the side of zero
/// that keeps precision, and a sampler for the truncated distribution.
#[inline]
fn interval(at: f64, bt: f64) -> (f64, Side) {
    if bt <= 0.0 {
        let (pa, pb) = (phi(at), phi(bt));
        (pb - pa, Side::Lower(pa))
    } else if at >= 0.0 {
        let (qa, qb) = (phi(-at), phi(-bt));
        (qa - qb, Side::Upper(qb))
    } else {
        let (pa, pb) = (phi(at), phi(bt));
        (pb - pa, Side::Lower(pa))
    }
}

#[derive(Clone, Copy)]
enum Side {
    Lower(f64),
    Upper(f64),
}

#[inline]
fn sample(side: Side, width: f64, u: f64) -> f64 {
    let y = match side {
        Side::Lower(pa) => phi_inv(pa + u * width),
        Side::Upper(qb) => -phi_inv(qb + u * width),
    };
    y.clamp(-Y_CLAMP, Y_CLAMP)
}

struct Reordered {
    n: usize,
    l: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Reordered {
    fn new(mut a: Vec<f64>, mut b: Vec<f64>, corr: &CorrMatrix) -> Self {
        let n = corr.dim();
        let mut c: Vec<f64> = (0..n * n).map(|k| corr.get(k / n, k % n)).collect();
        let mut l = vec![0.0f64; n * n];
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut best = i;
            let mut best_p = f64::INFINITY;
            for j in i..n {
                let s2 = c[j * n + j] - (0..i).map(|k| l[j * n + k].powi(2)).sum::<f64>();
                let p = if s2 > DEGENERATE_VAR {
                    let s = s2.sqrt();
                    let m: f64 = (0..i).map(|k| l[j * n + k] * y[k]).sum();
                    interval((a[j] - m) / s, (b[j] - m) / s).0
                } else {
                    2.0
                };
                if p < best_p {
                    best_p = p;
                    best = j;
                }
            }
            if best != i {
                a.swap(i, best);
                b.swap(i, best);
                for k in 0..n {
                    c.swap(i * n + k, best * n + k);
                }
                for k in 0..n {
                    c.swap(k * n + i, k * n + best);
                }
                for k in 0..i {
                    l.swap(i * n + k, best * n + k);
                }
            }
            let s2 = c[i * n + i] - (0..i).map(|k| l[i * n + k].powi(2)).sum::<f64>();
            if s2 <= DEGENERATE_VAR {
                y[i] = 0.0;
                continue;
            }
            let d = s2.sqrt();
            l[i * n + i] = d;
            for j in i + 1..n {
                let dot: f64 = (0..i).map(|k| l[j * n + k] * l[i * n + k]).sum();
                l[j * n + i] = (c[j * n + i] - dot) / d;
            }
            let m: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
            let (at, bt) = ((a[i] - m) / d, (b[i] - m) / d);
            let e = interval(at, bt).0;
            y[i] = if e > 1e-300 {
                (std_normal_pdf(at) - std_normal_pdf(bt)) / e
            } else if at.is_finite() {
                at
            } else {
                bt
            };
        }
        Self { n, l, a, b }
    }

    #[inline]
    fn integrand(&self, w: &[f64]) -> f64 {
        let n = self.n;
        let mut y = [0.0; MAX_DIM];
        let mut prod = 1.0;
        for i in 0..n {
            let s: f64 = (0..i).map(|k| self.l[i * n + k] * y[k]).sum();
            let d = self.l[i * n + i];
            if d > 0.0 {
                let (e, side) = interval((self.a[i] - s) / d, (self.b[i] - s) / d);
                prod *= e;
                if prod <= 0.0 {
                    return 0.0;
                }
                if i + 1 < n {
                    y[i] = sample(side, e, w[i]);
                }
            } else if !(self.a[i] < s && s <= self.b[i]) {
                return 0.0;
            }
        }
        prod
    }
}

struct OrthantTree {
    n: usize,
    l: Vec<f64>,
    t: Vec<f64>,
}

impl OrthantTree {
    fn descend(
        &self,
        level: usize,
        prod: f64,
        mask: usize,
        y: &mut [f64; MAX_DIM],
        w: &[f64],
        out: &mut [f64],
    ) {
        let n = self.n;
        if level == n {
            out[mask] += prod;
            return;
        }
        let s: f64 = (0..level).map(|k| self.l[level * n + k] * y[k]).sum();
        let d = self.l[level * n + level];
        let bit = 1 << level;
        if level + 2 == n && d > 0.0 {
            // the last two coordinates given y: bivariate normal
            let row = (level + 1) * n;
            let s2: f64 = (0..level).map(|k| self.l[row + k] * y[k]).sum();
            let (c1, c2) = (self.l[row + level], self.l[row + level + 1]);
            let sd2 = c1.hypot(c2);
            if sd2 > 0.0 {
                let cells = bvn_cells((self.t[level] - s) / d, (self.t[level + 1] - s2) / sd2, c1 / sd2);
                for (q, p) in cells.into_iter().enumerate() {
                    if p > 0.0 {
                        out[mask | q << level] += prod * p;
                    }
                }
                return;
            }
        }
        if d <= 0.0 {
            let next = if s > self.t[level] { mask | bit } else { mask };
            self.descend(level + 1, prod, next, y, w, out);
            return;
        }
        let z = (self.t[level] - s) / d;
        let (below, above) = (phi(z), phi(-z));
        // without a coordinate left, later levels do not depend on y[level]
        let sample = level < w.len() && level + 1 < n;
        y[level] = 0.0;
        if below > 0.0 {
            if sample {
                y[level] = phi_inv(w[level] * below).clamp(-Y_CLAMP, Y_CLAMP);
            }
            self.descend(level + 1, prod * below, mask, y, w, out);
        }
        if above > 0.0 {
            if sample {
                y[level] = (-phi_inv(w[level] * above)).clamp(-Y_CLAMP, Y_CLAMP);
            }
            self.descend(level + 1, prod * above, mask | bit, y, w, out);
        }
    }
}

/// Averages `integrand` over shifted lattice points, doubling the point
/// count from 2^10 until three standard errors (worst output) fall below
/// `settings.abs_tol` or the point budget is exhausted.
fn adaptive_qmc<F>(
    settings: &QmcSettings,
    salt: u64,
    ndim: usize,
    nout: usize,
    integrand: F,
) -> (Vec<f64>, f64)
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let lattices = ShiftedLattice::family(settings, salt);
    let r = lattices.len();
    let max_points = settings.max_points();
    let mut sums = vec![vec![0.0; nout]; r];
    let mut done = 0usize;
    let mut target = 1usize << START_POINTS_LOG2.min(settings.points_log2);
    loop {
        sums.par_iter_mut().zip(&lattices).for_each(|(acc, lattice)| {
            let mut w = [0.0; MAX_DIM];
            for j in done..target {
                lattice.point(j, &mut w[..ndim]);
                integrand(&w[..ndim], acc);
            }
        });
        done = target;
        let (means, error) = summarize(&sums, done);
        if error <= settings.abs_tol || done >= max_points {
            return (means, error);
        }
        target = (2 * done).min(max_points);
    }
}

fn summarize(sums: &[Vec<f64>], points: usize) -> (Vec<f64>, f64) {
    let r = sums.len();
    let nout = sums[0].len();
    let mut means = vec![0.0; nout];
    let mut worst_se: f64 = 0.0;
    for o in 0..nout {
        let est: Vec<f64> = sums.iter().map(|s| s[o] / points as f64).collect();
        let mean = est.iter().sum::<f64>() / r as f64;
        means[o] = mean;
        if r > 1 {
            let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
            worst_se = worst_se.max((var / r as f64).sqrt());
        } else {
            worst_se = f64::INFINITY;
        }
    }
    (means, 3.0 * worst_se)
}
