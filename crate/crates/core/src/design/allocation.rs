use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimality criterion applied to the covariance of the effect estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Minimise the trace of the covariance.
    A,
    /// Maximise the determinant of the information.
    D,
    /// Maximise the smallest eigenvalue of the information.
    E,
}

const LOG_RATIO_BOUND: f64 = 5.0;
const RESTARTS: usize = 20;
const RESTART_SEED: u64 = 0x616c_6c6f_6361_7465;

/// Covariance of τ̂₁..τ̂_K for a trial of total size 1 with allocation
/// ratios `r` and per-patient variances `v` (control first).
pub fn effect_covariance(v: &[f64], r: &[f64]) -> DMatrix<f64> {
    let k = r.len();
    let scale = 1.0 + r.iter().sum::<f64>();
    DMatrix::from_fn(k, k, |i, j| {
        let diag = if i == j { v[i + 1] / r[i] } else { 0.0 };
        scale * (v[0] + diag)
    })
}

/// Criterion value to be minimised: trace, determinant, or largest
/// eigenvalue of the effect covariance.
pub fn criterion_value(criterion: Criterion, v: &[f64], r: &[f64]) -> f64 {
    let k = r.len() as f64;
    let scale = 1.0 + r.iter().sum::<f64>();
    match criterion {
        Criterion::A => scale * (k * v[0] + r.iter().zip(&v[1..]).map(|(ri, vi)| vi / ri).sum::<f64>()),
        Criterion::D => {
            // det(v₀11ᵀ + D) = det(D)(1 + v₀ Σ 1/D_kk)
            let det_d: f64 = r.iter().zip(&v[1..]).map(|(ri, vi)| vi / ri).product();
            let lemma = 1.0 + v[0] * r.iter().zip(&v[1..]).map(|(ri, vi)| ri / vi).sum::<f64>();
            scale.powi(r.len() as i32) * det_d * lemma
        }
        Criterion::E => effect_covariance(v, r)
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
    }
}

/// Allocation ratios r_k = n_k/n₀ optimising `criterion` for per-patient
/// variances `v` = (v₀, …, v_K).
pub fn optimal_ratios(criterion: Criterion, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Domain("variances must be positive, control first".into()));
    }
    let k = v.len() - 1;
    let a_optimal: Vec<f64> = v[1..].iter().map(|vk| (vk / (k as f64 * v[0])).sqrt()).collect();
    if criterion == Criterion::A || k == 1 {
        return Ok(a_optimal);
    }
    let objective = |x: &[f64]| -> f64 {
        let mut penalty = 0.0;
        let r: Vec<f64> = x
            .iter()
            .map(|&xi| {
                let c = xi.clamp(-LOG_RATIO_BOUND, LOG_RATIO_BOUND);
                penalty += (xi - c).powi(2);
                c.exp()
            })
            .collect();
        criterion_value(criterion, v, &r).ln() + penalty
    };
    let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
    let mut starts = vec![vec![0.0; k], a_optimal.iter().map(|r| r.ln()).collect()];
    while starts.len() < RESTARTS {
        starts.push((0..k).map(|_| rng.random_range(-2.0..2.0)).collect());
    }
    let mut best: Option<Minimum> = None;
    let mut converged = 0;
    for x0 in starts {
        let m = nelder_mead(&objective, &x0, 0.5, 4000);
        converged += m.converged as usize;
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    let polished = nelder_mead(&objective, &best.x, 0.05, 4000);
    let best = if polished.value <= best.value { polished } else { best };
    if converged == 0 || !best.value.is_finite() {
        return Err(Error::Numeric(format!(
            "{criterion:?}-optimal allocation did not converge from {RESTARTS} starts \
             (best objective {:.6e} at log-ratios {:?})",
            best.value, best.x
        )));
    }
    Ok(best.x.iter().map(|x| x.clamp(-LOG_RATIO_BOUND, LOG_RATIO_BOUND).exp()).collect())
}

struct Minimum {
    x: Vec<f64>,
    value: f64,
    converged: bool,
}

/// Nelder–Mead simplex minimisation with the standard coefficients.
fn nelder_mead(f: &impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_iter: usize) -> Minimum {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = (0..=n)
        .map(|i| {
            let mut x = x0.to_vec();
            if i > 0 {
                x[i - 1] += step;
            }
            let fx = f(&x);
            (x, fx)
        })
        .collect();
    let mut converged = false;
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.abs() < 1e-13 && size < 1e-9 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|(x, _)| x[d]).sum::<f64>() / n as f64)
            .collect();
        let toward = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = toward(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = toward(-2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = toward(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = toward(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, fx) in simplex.iter_mut().skip(1) {
                    for (xi, bi) in x.iter_mut().zip(&best) {
                        *xi = bi + 0.5 * (*xi - bi);
                    }
                    *fx = f(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, converged }
}
