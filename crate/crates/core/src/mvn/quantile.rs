use super::{mvn_rectangle, CorrMatrix, QmcSettings};
use crate::error::{Error, Result};
use crate::normal::phi_inv;
use crate::roots::brent;

/// The common critical value `c` with `1 − P(Z_1 ≤ c, …, Z_K ≤ c) = alpha`
/// for `Z ~ MVN(0, corr)`.
pub fn equicoordinate_quantile(alpha: f64, corr: &CorrMatrix, settings: &QmcSettings) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    settings.validate()?;
    let k = corr.dim();
    let single = phi_inv(1.0 - alpha);
    if k == 1 {
        return Ok(single);
    }
    let lower = vec![f64::NEG_INFINITY; k];
    let zero = vec![0.0; k];
    let excess = |c: f64| -> Result<f64> {
        let upper = vec![c; k];
        let p = mvn_rectangle(&lower, &upper, &zero, corr, settings)?;
        Ok(1.0 - p.value - alpha)
    };
    // The single-coordinate quantile bounds c from below; Bonferroni bounds
    // it from above. Both are widened in case of integration noise.
    let mut lo = single - 0.01;
    let mut hi = phi_inv(1.0 - alpha / k as f64) + 0.01;
    let mut widen = 0;
    while excess(lo)? < 0.0 || excess(hi)? > 0.0 {
        widen += 1;
        if widen > 20 {
            return Err(Error::Numeric(format!(
                "could not bracket the equicoordinate quantile for alpha = {alpha}"
            )));
        }
        lo -= 0.5;
        hi += 0.5;
    }
    brent(excess, lo, hi, 1e-10, 200)
}
