use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::MAX_DIM;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

/// A validated correlation matrix of dimension 1..=6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CorrMatrix {
    dim: usize,
    // row-major
    entries: Vec<f64>,
}

impl CorrMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Matrix("matrix is not square".into()));
        }
        Self::from_row_major(dim, rows.into_iter().flatten().collect())
    }

    pub fn from_row_major(dim: usize, mut entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Matrix("empty matrix".into()));
        }
        if dim > MAX_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        if entries.len() != dim * dim {
            return Err(Error::Matrix(format!(
                "expected {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Matrix("non-finite entry".into()));
        }
        for i in 0..dim {
            if (entries[i * dim + i] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::Matrix(format!("diagonal entry {i} is not 1")));
            }
            entries[i * dim + i] = 1.0;
            for j in 0..i {
                let (u, l) = (entries[j * dim + i], entries[i * dim + j]);
                if (u - l).abs() > SYMMETRY_TOL {
                    return Err(Error::Matrix(format!("entry ({i},{j}) breaks symmetry")));
                }
                let v = 0.5 * (u + l);
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::Matrix(format!("entry ({i},{j}) = {v} outside [-1,1]")));
                }
                entries[j * dim + i] = v;
                entries[i * dim + j] = v;
            }
        }
        let m = Self { dim, entries };
        let min_eig = m.eigen().eigenvalues.min();
        if min_eig < -PSD_TOL {
            return Err(Error::Matrix(format!(
                "not positive semi-definite (smallest eigenvalue {min_eig:e})"
            )));
        }
        Ok(m)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::exchangeable(dim, 0.0)
    }

    pub fn exchangeable(dim: usize, rho: f64) -> Result<Self> {
        let mut entries = vec![rho; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        Self::from_row_major(dim, entries)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// The common off-diagonal value if every off-diagonal entry agrees to
    /// within `tol` (trivially `Some(0)` in dimension one).
    pub fn common_correlation(&self, tol: f64) -> Option<f64> {
        if self.dim == 1 {
            return Some(0.0);
        }
        let first = self.get(1, 0);
        let all_equal = (0..self.dim)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .all(|(i, j)| (self.get(i, j) - first).abs() <= tol);
        all_equal.then_some(first)
    }

    /// Principal sub-matrix on `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let entries = indices
            .iter()
            .flat_map(|&i| indices.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self::from_row_major(indices.len(), entries)
    }

    fn eigen(&self) -> SymmetricEigen<f64, nalgebra::Dyn> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries).symmetric_eigen()
    }

    /// `A` with `A Aᵀ = C`, from the eigen-decomposition with tiny negative
    /// eigenvalues clamped to zero. Row-major `dim × dim`.
    pub(crate) fn eigen_factor(&self) -> Vec<f64> {
        let eig = self.eigen();
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt();
            }
        }
        out
    }

    /// Lower-triangular factor in the given variable order. Columns whose
    /// residual variance vanishes are zeroed, leaving a deterministic row.
    pub(crate) fn cholesky_semidefinite(&self) -> Vec<f64> {
        let n = self.dim;
        let mut l = vec![0.0f64; n * n];
        for i in 0..n {
            let s2 = self.get(i, i) - (0..i).map(|k| l[i * n + k].powi(2)).sum::<f64>();
            if s2 <= DEGENERATE_VAR {
                continue;
            }
            let d = s2.sqrt();
            l[i * n + i] = d;
            for j in i + 1..n {
                let dot: f64 = (0..i).map(|k| l[j * n + k] * l[i * n + k]).sum();
                l[j * n + i] = (self.get(j, i) - dot) / d;
            }
        }
        l
    }
}

/// Conditional variances below this are treated as exactly zero.
pub(crate) const DEGENERATE_VAR: f64 = 1e-10;

impl TryFrom<Vec<Vec<f64>>> for CorrMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<CorrMatrix> for Vec<Vec<f64>> {
    fn from(m: CorrMatrix) -> Self {
        m.rows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_matrices() {
        assert!(matches!(
            CorrMatrix::new(vec![vec![1.0, 0.5], vec![0.4, 1.0]]),
            Err(Error::Matrix(_))
        ));
        assert!(matches!(
            CorrMatrix::new(vec![vec![1.0, 1.2], vec![1.2, 1.0]]),
            Err(Error::Matrix(_))
        ));
        // valid entries but indefinite
        assert!(matches!(
            CorrMatrix::exchangeable(3, -0.9),
            Err(Error::Matrix(_))
        ));
        assert!(matches!(
            CorrMatrix::identity(7),
            Err(Error::UnsupportedDimension(7))
        ));
    }

    #[test]
    fn accepts_semidefinite() {
        let m = CorrMatrix::exchangeable(3, 1.0).unwrap();
        let l = m.cholesky_semidefinite();
        assert_eq!(l[0], 1.0);
        assert_eq!(l[4], 0.0);
        assert_eq!(l[8], 0.0);
        let a = m.eigen_factor();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * a[j * 3 + k]).sum();
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exchangeability() {
        let m = CorrMatrix::exchangeable(4, 0.5).unwrap();
        assert_eq!(m.common_correlation(1e-10), Some(0.5));
        let m = CorrMatrix::new(vec![
            vec![1.0, 0.5, 0.4],
            vec![0.5, 1.0, 0.5],
            vec![0.4, 0.5, 1.0],
        ])
        .unwrap();
        assert_eq!(m.common_correlation(1e-10), None);
        assert_eq!(m.select(&[2, 0]).unwrap().get(0, 1), 0.4);
    }
}
