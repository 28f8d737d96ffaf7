//! Mahalanobis quadratic forms, their per-feature-pair decomposition and the
//! distance to similarity transform.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric positive semidefinite matrix.
///
/// Construction checks symmetry (`|A_jk - A_kj| <= 1e-12 * max(1, |A_jk|)`)
/// and that the smallest eigenvalue is at least `-1e-8 * max(1, lambda_max)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PsdMatrix(DMatrix<f64>);

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const EIGEN_FLOOR: f64 = 1e-8;

impl PsdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_psd(&m)?;
        Ok(PsdMatrix(m))
    }

    /// Skips the eigenvalue check; symmetry is still enforced by averaging.
    /// Only for matrices that come straight out of a PSD projection.
    pub(crate) fn from_projection(m: DMatrix<f64>) -> Self {
        PsdMatrix(symmetrize(&m))
    }

    pub fn zeros(d: usize) -> Self {
        PsdMatrix(DMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        PsdMatrix(DMatrix::identity(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if let Some(v) = diag.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Numerical(format!("diagonal entry {v} is not >= 0")));
        }
        Ok(PsdMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag))))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.0)
    }
}

impl TryFrom<Vec<Vec<f64>>> for PsdMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        PsdMatrix::new(matrix_from_rows(&rows)?)
    }
}

impl From<PsdMatrix> for Vec<Vec<f64>> {
    fn from(m: PsdMatrix) -> Self {
        m.to_rows()
    }
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch {
            expected: cols,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(n, cols, |i, j| rows[i][j]))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Checks the PSD invariants.
pub fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let d = m.nrows();
    for j in 0..d {
        for k in (j + 1)..d {
            let (a, b) = (m[(j, k)], m[(k, j)]);
            if (a - b).abs() > SYMMETRY_TOL * a.abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "matrix not symmetric at ({j},{k}): {a} vs {b}"
                )));
            }
        }
    }
    if d == 0 {
        return Ok(());
    }
    let eig = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if min < -EIGEN_FLOOR * max.max(1.0) {
        return Err(Error::Numerical(format!(
            "matrix not PSD: smallest eigenvalue {min}"
        )));
    }
    Ok(())
}

fn difference(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(x.iter().zip(y).map(|(a, b)| a - b).collect())
}

/// `u^T A u` for an arbitrary square matrix, no clamping.
pub fn quadratic_form(u: &[f64], a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != u.len() || a.ncols() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: u.len(),
        });
    }
    let mut total = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        if uj == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (k, &uk) in u.iter().enumerate() {
            row += a[(j, k)] * uk;
        }
        total += uj * row;
    }
    Ok(total)
}

/// `(x - y)^T A (x - y)`, clamped at zero to absorb round-off.
pub fn mahalanobis_distance(x: &[f64], y: &[f64], a: &PsdMatrix) -> Result<f64> {
    let u = difference(x, y)?;
    Ok(quadratic_form(&u, a.matrix())?.max(0.0))
}

/// Additive decomposition of a Mahalanobis distance over feature pairs:
/// `C_jk = (x_j - y_j) A_jk (x_k - y_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Contributions {
    pub matrix: DMatrix<f64>,
}

impl Contributions {
    pub fn total(&self) -> f64 {
        self.matrix.sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.matrix.nrows())
            .map(|j| self.matrix.row(j).sum())
            .collect()
    }

    /// Feature indices ordered by decreasing absolute row sum; lower index
    /// first on ties.
    pub fn ranking(&self) -> Vec<usize> {
        rank_by_magnitude(&self.row_sums())
    }
}

pub(crate) fn rank_by_magnitude(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then(a.cmp(&b))
    });
    idx
}

pub fn contribution_matrix(x: &[f64], y: &[f64], a: &DMatrix<f64>) -> Result<Contributions> {
    let u = difference(x, y)?;
    if a.nrows() != u.len() || a.ncols() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: u.len(),
        });
    }
    let d = u.len();
    Ok(Contributions {
        matrix: DMatrix::from_fn(d, d, |j, k| u[j] * a[(j, k)] * u[k]),
    })
}

/// A distance explanation restated as a similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityExplanation {
    pub similarity: f64,
    /// Per-cell similarity contributions `1/d^2 - C_jk / max_dist`.
    pub contributions: Option<DMatrix<f64>>,
}

/// `1 - dist / max_dist`, plus the matching per-cell transform when a
/// contribution matrix is supplied.
pub fn similarity_from_distance(
    dist: f64,
    max_dist: f64,
    contributions: Option<&Contributions>,
) -> Result<SimilarityExplanation> {
    if !(max_dist > 0.0) || !max_dist.is_finite() {
        return Err(Error::Config(format!("max_dist must be > 0, got {max_dist}")));
    }
    let contributions = contributions.map(|c| {
        let d = c.matrix.nrows() as f64;
        let base = if d > 0.0 { 1.0 / (d * d) } else { 0.0 };
        c.matrix.map(|v| base - v / max_dist)
    });
    Ok(SimilarityExplanation {
        similarity: 1.0 - dist / max_dist,
        contributions,
    })
}
