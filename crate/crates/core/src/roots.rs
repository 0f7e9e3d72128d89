//! Scalar root finding on bracketed, monotone-ish functions.

use crate::error::{Error, Result};

/// Brent's method. `f(lo)` and `f(hi)` must differ in sign (a zero at either
/// end is returned immediately). Stops when the bracket is narrower than
/// `xtol` or after `max_iter` iterations.
pub fn brent<F>(mut f: F, lo: f64, hi: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Numeric(format!(
            "root not bracketed on [{lo}, {hi}] (f = {fa:e}, {fb:e})"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(Error::Numeric(format!(
        "Brent iteration did not converge in {max_iter} steps"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_simple_roots() {
        let r = brent(|x| Ok(x * x - 2.0), 0.0, 2.0, 1e-14, 100).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
        let r = brent(|x| Ok(x.cos() - x), 0.0, 1.0, 1e-14, 100).unwrap();
        assert!((r.cos() - r).abs() < 1e-12);
    }

    #[test]
    fn reports_missing_bracket() {
        assert!(brent(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-10, 50).is_err());
    }

    #[test]
    fn endpoint_root() {
        assert_eq!(brent(|x| Ok(x - 1.0), 1.0, 3.0, 1e-10, 50).unwrap(), 1.0);
    }
}
