//! Numerical kernels: PSD projection, ridge least squares, non-negative
//! least squares with forward selection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::metric::{symmetrize, PsdMatrix};

/// Frobenius-nearest PSD matrix: symmetrize, eigendecompose, clip negative
/// eigenvalues to zero, reconstruct.
pub fn project_psd(m: &DMatrix<f64>) -> Result<PsdMatrix> {
    Ok(PsdMatrix::from_projection(project_psd_raw(m)?))
}

pub(crate) fn project_psd_raw(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("cannot project a non-finite matrix".into()));
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let eig = SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("eigendecomposition did not converge".into()))?;
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    Ok(symmetrize(&out))
}

/// Result of a (weighted) ridge regression.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// The unregularized normal matrix was (numerically) singular.
    pub rank_deficient: bool,
}

/// Minimizes `sum_i w_i (y_i - b - x_i^T beta)^2 + ridge * |beta|^2`.
///
/// The intercept is unpenalized and only fitted when `fit_intercept` is set.
/// The normal equations are solved through an eigendecomposition, which
/// approaches the minimum-norm solution as `ridge -> 0`.
pub fn weighted_ridge(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    ridge: f64,
    fit_intercept: bool,
) -> Result<RidgeFit> {
    let (n, p) = x.shape();
    if n == 0 {
        return Err(Error::Empty("ridge regression on zero rows".into()));
    }
    if y.len() != n || w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len().min(w.len()),
        });
    }
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Numerical("weights sum to zero".into()));
    }
    let (xmean, ymean) = if fit_intercept {
        let xm: Vec<f64> = (0..p)
            .map(|j| (0..n).map(|i| w[i] * x[(i, j)]).sum::<f64>() / wsum)
            .collect();
        let ym = (0..n).map(|i| w[i] * y[i]).sum::<f64>() / wsum;
        (xm, ym)
    } else {
        (vec![0.0; p], 0.0)
    };
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            row[j] = x[(i, j)] - xmean[j];
        }
        let yc = y[i] - ymean;
        for j in 0..p {
            if row[j] == 0.0 {
                continue;
            }
            let wr = w[i] * row[j];
            rhs[j] += wr * yc;
            for k in j..p {
                gram[(j, k)] += wr * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            gram[(j, k)] = gram[(k, j)];
        }
    }
    let (coef, rank_deficient) = if p == 0 {
        (Vec::new(), false)
    } else {
        let eig = SymmetricEigen::new(gram);
        let max = eig.eigenvalues.max().max(0.0);
        let rank_deficient = eig.eigenvalues.min() <= 1e-10 * max.max(1e-300);
        let proj = eig.eigenvectors.transpose() * &rhs;
        let scaled = DVector::from_iterator(
            p,
            proj.iter().zip(eig.eigenvalues.iter()).map(|(r, l)| {
                let denom = l.max(0.0) + ridge;
                if denom > 0.0 {
                    r / denom
                } else {
                    0.0
                }
            }),
        );
        let beta = &eig.eigenvectors * scaled;
        (beta.iter().copied().collect::<Vec<_>>(), rank_deficient)
    };
    let intercept = if fit_intercept {
        ymean - coef.iter().zip(&xmean).map(|(b, m)| b * m).sum::<f64>()
    } else {
        0.0
    };
    Ok(RidgeFit {
        coef,
        intercept,
        rank_deficient,
    })
}

fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(1e-300);
    svd.solve(b, eps)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))
}

/// Lawson-Hanson active-set solver for `min |A x - b|^2` subject to `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = a.shape();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let bv = DVector::from_column_slice(b);
    let mut x = DVector::<f64>::zeros(p);
    let mut passive = vec![false; p];
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0)
        * bv.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 1e-12 * scale * (n.max(p) as f64);
    let max_outer = 3 * p + 10;

    for _ in 0..max_outer {
        let grad = a.transpose() * (&bv - a * &x);
        let candidate = (0..p)
            .filter(|&j| !passive[j])
            .filter(|&j| grad[j] > tol)
            .fold(None::<usize>, |best, j| match best {
                Some(b) if grad[b] >= grad[j] => Some(b),
                _ => Some(j),
            });
        let Some(j) = candidate else { break };
        passive[j] = true;

        for _ in 0..(3 * p + 10) {
            let idx: Vec<usize> = (0..p).filter(|&k| passive[k]).collect();
            let sub = a.select_columns(&idx);
            let s_p = lstsq(&sub, &bv)?;
            let mut s = DVector::<f64>::zeros(p);
            for (t, &k) in idx.iter().enumerate() {
                s[k] = s_p[t];
            }
            if idx.iter().all(|&k| s[k] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &k in &idx {
                if s[k] <= 0.0 {
                    let denom = x[k] - s[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[k] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x = &x + (s - &x) * alpha;
            for &k in &idx {
                if x[k] <= tol.min(1e-15) {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
            if !passive.iter().any(|&v| v) {
                break;
            }
        }
    }
    Ok(x.iter().map(|v| v.max(0.0)).collect())
}

fn residual_ss(a: &DMatrix<f64>, b: &[f64], x: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    let r = DVector::from_column_slice(b) - a * xv;
    r.norm_squared()
}

/// NNLS restricted to `active` columns, returned in full coordinates.
pub fn nnls_on(a: &DMatrix<f64>, b: &[f64], active: &[usize]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; a.ncols()];
    if active.is_empty() {
        return Ok(out);
    }
    let sub = a.select_columns(active);
    for (v, &j) in nnls(&sub, b)?.into_iter().zip(active) {
        out[j] = v;
    }
    Ok(out)
}

/// Greedy forward selection of at most `max_nonzeros` columns, each step
/// adding the column whose inclusion most reduces the NNLS residual (lowest
/// index on ties), then an NNLS refit on the selected set.
pub fn nnls_forward(a: &DMatrix<f64>, b: &[f64], max_nonzeros: usize) -> Result<Vec<f64>> {
    let p = a.ncols();
    if max_nonzeros >= p {
        return nnls(a, b);
    }
    let mut active: Vec<usize> = Vec::new();
    let mut current = b.iter().map(|v| v * v).sum::<f64>();
    while active.len() < max_nonzeros {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..p).filter(|j| !active.contains(j)) {
            let mut trial = active.clone();
            trial.push(j);
            trial.sort_unstable();
            let x = nnls_on(a, b, &trial)?;
            let rss = residual_ss(a, b, &x);
            if best.map_or(true, |(_, r)| rss < r) {
                best = Some((j, rss));
            }
        }
        match best {
            Some((j, rss)) if rss < current * (1.0 - 1e-12) => {
                active.push(j);
                active.sort_unstable();
                current = rss;
            }
            _ => break,
        }
    }
    nnls_on(a, b, &active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        symmetrize(&m)
    }

    fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let l = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &l * l.transpose()
    }

    #[test]
    fn psd_input_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_psd(&mut rng, 5);
        let q = project_psd(&p).unwrap();
        assert!((q.matrix() - &p).abs().max() < 1e-10);
    }

    #[test]
    fn clips_negative_eigenvalue() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let q = project_psd(&m).unwrap();
        assert!((q.matrix() - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).abs().max() < 1e-14);
    }

    #[test]
    fn projection_is_nearest_among_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let m = random_symmetric(&mut rng, 4);
            let proj = project_psd(&m).unwrap();
            let best = (proj.matrix() - &m).norm();
            for _ in 0..100 {
                let p = random_psd(&mut rng, 4) * rng.random_range(0.0..2.0);
                assert!(best <= (&p - &m).norm() + 1e-12);
            }
            assert!(crate::metric::check_psd(proj.matrix()).is_ok());
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(project_psd(&m).is_err());
    }

    #[test]
    fn ridge_recovers_linear_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(50, 3, |_, _| rng.random_range(-1.0..1.0));
        let beta = [1.0, -2.0, 0.5];
        let y: Vec<f64> = (0..50)
            .map(|i| 3.0 + (0..3).map(|j| x[(i, j)] * beta[j]).sum::<f64>())
            .collect();
        let w: Vec<f64> = (0..50).map(|_| rng.random_range(0.1..2.0)).collect();
        let fit = weighted_ridge(&x, &y, &w, 1e-10, true).unwrap();
        assert!((fit.intercept - 3.0).abs() < 1e-8);
        for j in 0..3 {
            assert!((fit.coef[j] - beta[j]).abs() < 1e-8);
        }
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn ridge_flags_rank_deficiency() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let fit = weighted_ridge(&x, &[1.0, 2.0, 3.0], &[1.0; 3], 1e-6, false).unwrap();
        assert!(fit.rank_deficient);
        // Minimum-norm split of the coefficient across the duplicated column.
        assert!((fit.coef[0] - fit.coef[1]).abs() < 1e-9);
        assert!((fit.coef[0] - 0.5).abs() < 1e-5);
    }

    /// Brute force over all active sets: unconstrained LS on each support,
    /// keep feasible ones, take the best.
    fn nnls_brute(a: &DMatrix<f64>, b: &[f64]) -> f64 {
        let p = a.ncols();
        let mut best = b.iter().map(|v| v * v).sum::<f64>();
        for mask in 1u32..(1 << p) {
            let idx: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0).collect();
            let s = lstsq(&a.select_columns(&idx), &DVector::from_column_slice(b)).unwrap();
            if s.iter().all(|v| *v >= -1e-12) {
                let mut x = vec![0.0; p];
                for (t, &j) in idx.iter().enumerate() {
                    x[j] = s[t].max(0.0);
                }
                best = best.min(residual_ss(a, b, &x));
            }
        }
        best
    }

    #[test]
    fn nnls_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = DMatrix::from_fn(12, 4, |_, _| rng.random_range(-1.0..1.0));
            let b: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = nnls(&a, &b).unwrap();
            assert!(x.iter().all(|v| *v >= 0.0));
            let got = residual_ss(&a, &b, &x);
            let want = nnls_brute(&a, &b);
            assert!(got <= want + 1e-9 * want.max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn forward_selection_respects_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(40, 6, |_, _| rng.random_range(0.0..1.0));
        let truth = [0.0, 3.0, 0.0, 0.0, 1.0, 0.2];
        let b: Vec<f64> = (0..40)
            .map(|i| (0..6).map(|j| a[(i, j)] * truth[j]).sum())
            .collect();
        let x = nnls_forward(&a, &b, 2).unwrap();
        assert_eq!(x.iter().filter(|v| **v > 0.0).count(), 2);
        assert!(x[1] > 0.0 && x[4] > 0.0);
        let full = nnls_forward(&a, &b, 10).unwrap();
        for j in 0..6 {
            assert!((full[j] - truth[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_design_gives_zero() {
        let a = DMatrix::zeros(5, 3);
        assert_eq!(nnls(&a, &[1.0; 5]).unwrap(), vec![0.0; 3]);
        assert_eq!(nnls_forward(&a, &[1.0; 5], 2).unwrap(), vec![0.0; 3]);
    }
}
