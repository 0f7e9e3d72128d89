use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CorrMatrix, MAX_DIM};
use crate::error::{Error, Result};
use crate::normal::phi_inv;

/// Precision control for randomized quasi-Monte Carlo integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QmcSettings {
    /// Maximum number of lattice points per randomization, as a power of two.
    pub points_log2: u32,
    pub randomizations: u32,
    pub seed: u64,
    /// Target for the reported error estimate of adaptive integrals.
    pub abs_tol: f64,
}

impl Default for QmcSettings {
    fn default() -> Self {
        Self {
            points_log2: 16,
            randomizations: 8,
            seed: 0x6d75_6c74_6961_726d,
            abs_tol: 1e-6,
        }
    }
}

impl QmcSettings {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(10..=24).contains(&self.points_log2) {
            return Err(Error::validation(
                "qmc.points_log2",
                format!("must lie in [10, 24], got {}", self.points_log2),
            ));
        }
        if self.randomizations == 0 {
            return Err(Error::validation("qmc.randomizations", "must be at least 1"));
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::validation("qmc.abs_tol", "must be positive"));
        }
        Ok(())
    }

    pub fn max_points(&self) -> usize {
        1usize << self.points_log2
    }
}

// Generating vector of an embedded rank-1 lattice in base 2, chosen
// component by component for 2^10..2^16 points.
const GENERATORS: [u64; MAX_DIM] = [1, 17985, 31589, 5823, 27401, 2521];

/// A randomly shifted rank-1 lattice sequence with the baker's transform
/// applied. Points are taken in radical-inverse order, so every prefix of
/// length 2^m is a full lattice.
#[derive(Debug, Clone)]
pub(crate) struct ShiftedLattice {
    shift: [f64; MAX_DIM],
}

impl ShiftedLattice {
    /// One independently shifted copy per randomization, derived from the seed.
    pub(crate) fn family(settings: &QmcSettings, salt: u64) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        (0..settings.randomizations)
            .map(|_| {
                let mut shift = [0.0; MAX_DIM];
                shift.iter_mut().for_each(|s| *s = rng.random::<f64>());
                Self { shift }
            })
            .collect()
    }

    /// Point `j` written into `out` (length ≤ MAX_DIM), each coordinate in (0,1).
    #[inline]
    pub(crate) fn point(&self, j: usize, out: &mut [f64]) {
        for (d, o) in out.iter_mut().enumerate() {
            let x = (unshifted(j, d) + self.shift[d]).fract();
            let t = 1.0 - (2.0 * x - 1.0).abs();
            *o = t.clamp(1e-15, 1.0 - 1e-15);
        }
    }
}

#[inline]
fn unshifted(j: usize, d: usize) -> f64 {
    let phi = u64::from((j as u32).reverse_bits());
    (phi.wrapping_mul(GENERATORS[d]) & 0xFFFF_FFFF) as f64 / 4_294_967_296.0
}

/// Correlated normal vectors laid out randomization by randomization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalStream {
    dim: usize,
    per_randomization: usize,
    randomizations: usize,
    values: Vec<f64>,
}

impl NormalStream {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.per_randomization * self.randomizations
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn randomizations(&self) -> usize {
        self.randomizations
    }

    pub fn per_randomization(&self) -> usize {
        self.per_randomization
    }

    /// All points of randomization `r`, as consecutive `dim`-length slices.
    pub fn block(&self, r: usize) -> std::slice::ChunksExact<'_, f64> {
        let width = self.per_randomization * self.dim;
        self.values[r * width..(r + 1) * width].chunks_exact(self.dim)
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }
}

/// Deterministic stream of `2^points_log2 × randomizations` draws from
/// `MVN(mean, corr)`.
pub fn qmc_normal_stream(
    dim: usize,
    settings: &QmcSettings,
    corr: &CorrMatrix,
    mean: &[f64],
) -> Result<NormalStream> {
    settings.validate()?;
    if dim != corr.dim() || mean.len() != dim {
        return Err(Error::Domain(format!(
            "stream dimension {dim} does not match corr ({}) and mean ({})",
            corr.dim(),
            mean.len()
        )));
    }
    let factor = corr.eigen_factor();
    let n = settings.max_points();
    let lattices = ShiftedLattice::family(settings, 0x5354_5245_414d);
    let blocks: Vec<Vec<f64>> = lattices
        .par_iter()
        .map(|lattice| {
            let mut block = Vec::with_capacity(n * dim);
            let mut u = [0.0; MAX_DIM];
            let mut z = [0.0; MAX_DIM];
            for j in 0..n {
                lattice.point(j, &mut u[..dim]);
                for d in 0..dim {
                    z[d] = phi_inv(u[d]);
                }
                for i in 0..dim {
                    let row = &factor[i * dim..(i + 1) * dim];
                    let v: f64 = row.iter().zip(&z[..dim]).map(|(a, b)| a * b).sum();
                    block.push(mean[i] + v);
                }
            }
            block
        })
        .collect();
    Ok(NormalStream {
        dim,
        per_randomization: n,
        randomizations: blocks.len(),
        values: blocks.concat(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_validation() {
        assert!(QmcSettings::default().validate().is_ok());
        let bad = QmcSettings {
            points_log2: 9,
            ..QmcSettings::default()
        };
        assert!(bad.validate().is_err());
        let bad = QmcSettings {
            randomizations: 0,
            ..QmcSettings::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stream_moments() {
        let corr = CorrMatrix::new(vec![
            vec![1.0, 0.5, 0.2],
            vec![0.5, 1.0, 0.3],
            vec![0.2, 0.3, 1.0],
        ])
        .unwrap();
        let mean = [0.5, -1.0, 2.0];
        let s = QmcSettings {
            randomizations: 1,
            ..QmcSettings::default()
        };
        let stream = qmc_normal_stream(3, &s, &corr, &mean).unwrap();
        let n = stream.len() as f64;
        assert_eq!(stream.len(), 1 << 16);
        let mut m = [0.0; 3];
        for p in stream.iter() {
            for d in 0..3 {
                m[d] += p[d] / n;
            }
        }
        for d in 0..3 {
            assert!((m[d] - mean[d]).abs() < 4.0 / n.sqrt(), "mean {d}");
        }
        for i in 0..3 {
            for j in 0..i {
                let (mut sij, mut sii, mut sjj) = (0.0, 0.0, 0.0);
                for p in stream.iter() {
                    let (a, b) = (p[i] - m[i], p[j] - m[j]);
                    sij += a * b;
                    sii += a * a;
                    sjj += b * b;
                }
                let r = sij / (sii * sjj).sqrt();
                assert!((r - corr.get(i, j)).abs() < 1e-2, "corr {i}{j}: {r}");
            }
        }
    }

    #[test]
    fn lattice_prefixes_are_full_lattices() {
        for m in [1u32, 4, 10, 16] {
            let n = 1usize << m;
            for d in 0..MAX_DIM {
                let mut seen = vec![false; n];
                for j in 0..n {
                    let x = unshifted(j, d) * n as f64;
                    assert_eq!(x, x.round(), "m={m} d={d} j={j}");
                    let i = x as usize;
                    assert!(!seen[i], "m={m} d={d} j={j}");
                    seen[i] = true;
                }
            }
        }
    }

    #[test]
    fn stream_is_deterministic() {
        let corr = CorrMatrix::exchangeable(2, 0.5).unwrap();
        let s = QmcSettings {
            points_log2: 10,
            ..QmcSettings::default()
        };
        let a = qmc_normal_stream(2, &s, &corr, &[0.0, 0.0]).unwrap();
        let b = qmc_normal_stream(2, &s, &corr, &[0.0, 0.0]).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x
            .iter()
            .zip(y)
            .all(|(u, v)| u.to_bits() == v.to_bits())));
    }
}
