//! Reference surrogates: a linear model on the concatenated pair and an
//! unconstrained bilinear form.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::PairSurrogate;
use crate::instance::InstancePair;
use crate::linalg::weighted_ridge;
use crate::metric::{matrix_from_rows, matrix_to_rows};
use crate::oracle::{pair_distances, DistanceOracle};
use crate::perturb::Neighborhood;
use crate::repr::Representation;

pub const BASELINE_RIDGE: f64 = 1e-6;

/// `g_x . xbar + g_y . ybar + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSurrogate {
    pub representation: Representation,
    pub g_x: Vec<f64>,
    pub g_y: Vec<f64>,
    pub intercept: f64,
    pub rank_deficient: bool,
    pub weighted_mae: f64,
}

impl LinearSurrogate {
    pub fn predict(&self, pair: &InstancePair) -> Result<f64> {
        let x = self.representation.encode_lenient(&pair.left)?;
        let y = self.representation.encode_lenient(&pair.right)?;
        Ok(self.predict_encoded(&x, &y))
    }

    fn predict_encoded(&self, x: &[f64], y: &[f64]) -> f64 {
        self.intercept
            + self.g_x.iter().zip(x).map(|(g, v)| g * v).sum::<f64>()
            + self.g_y.iter().zip(y).map(|(g, v)| g * v).sum::<f64>()
    }
}

impl PairSurrogate for LinearSurrogate {
    fn predict_pair(&self, pair: &InstancePair) -> Result<f64> {
        self.predict(pair)
    }
}

/// `xbar^T A ybar` with `A` unconstrained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearSurrogate {
    pub representation: Representation,
    #[serde(with = "rows")]
    pub matrix: DMatrix<f64>,
    /// The design did not determine `A`; the minimum-norm solution was taken.
    pub rank_deficient: bool,
    pub weighted_mae: f64,
}

mod rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

impl BilinearSurrogate {
    pub fn predict(&self, pair: &InstancePair) -> Result<f64> {
        let x = self.representation.encode_lenient(&pair.left)?;
        let y = self.representation.encode_lenient(&pair.right)?;
        Ok(self.predict_encoded(&x, &y))
    }

    fn predict_encoded(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = x.len();
        let mut s = 0.0;
        for j in 0..d {
            for k in 0..d {
                s += x[j] * self.matrix[(j, k)] * y[k];
            }
        }
        s
    }
}

impl PairSurrogate for BilinearSurrogate {
    fn predict_pair(&self, pair: &InstancePair) -> Result<f64> {
        self.predict(pair)
    }
}

fn targets(nbhd: &Neighborhood, oracle: &dyn DistanceOracle) -> Result<Vec<f64>> {
    if nbhd.members.is_empty() {
        return Err(Error::Empty("empty neighborhood".into()));
    }
    let t = pair_distances(oracle, &nbhd.pairs())?;
    if let Some(v) = t.iter().find(|v| !v.is_finite()) {
        return Err(Error::Oracle(format!("non-finite black-box distance {v}")));
    }
    Ok(t)
}

fn weighted_mae(pred: impl Iterator<Item = f64>, t: &[f64], w: &[f64]) -> f64 {
    let wsum: f64 = w.iter().sum();
    pred.zip(t).zip(w).map(|((p, t), w)| w * (p - t).abs()).sum::<f64>() / wsum
}

pub fn fit_concat_linear(nbhd: &Neighborhood, oracle: &dyn DistanceOracle) -> Result<LinearSurrogate> {
    let t = targets(nbhd, oracle)?;
    fit_concat_linear_with_targets(nbhd, &t)
}

/// Weighted ridge on `(xbar_i, ybar_i)` with an unpenalized intercept.
pub fn fit_concat_linear_with_targets(nbhd: &Neighborhood, targets: &[f64]) -> Result<LinearSurrogate> {
    let d = nbhd.dim();
    let n = nbhd.members.len();
    let design = DMatrix::from_fn(n, 2 * d, |i, j| {
        let m = &nbhd.members[i];
        if j < d {
            m.xbar[j]
        } else {
            m.ybar[j - d]
        }
    });
    let w = nbhd.weights();
    let fit = weighted_ridge(&design, targets, &w, BASELINE_RIDGE, true)?;
    let mut out = LinearSurrogate {
        representation: nbhd.representation.clone(),
        g_x: fit.coef[..d].to_vec(),
        g_y: fit.coef[d..].to_vec(),
        intercept: fit.intercept,
        rank_deficient: fit.rank_deficient,
        weighted_mae: 0.0,
    };
    out.weighted_mae = weighted_mae(
        nbhd.members.iter().map(|m| out.predict_encoded(&m.xbar, &m.ybar)),
        targets,
        &w,
    );
    Ok(out)
}

pub fn fit_bilinear(nbhd: &Neighborhood, oracle: &dyn DistanceOracle) -> Result<BilinearSurrogate> {
    let t = targets(nbhd, oracle)?;
    fit_bilinear_with_targets(nbhd, &t)
}

/// Weighted ridge on the outer products `xbar_i ybar_i^T`, no intercept.
pub fn fit_bilinear_with_targets(nbhd: &Neighborhood, targets: &[f64]) -> Result<BilinearSurrogate> {
    let d = nbhd.dim();
    let n = nbhd.members.len();
    let design = DMatrix::from_fn(n, d * d, |i, c| {
        let m = &nbhd.members[i];
        m.xbar[c / d] * m.ybar[c % d]
    });
    let w = nbhd.weights();
    let fit = weighted_ridge(&design, targets, &w, BASELINE_RIDGE, false)?;
    let mut out = BilinearSurrogate {
        representation: nbhd.representation.clone(),
        matrix: DMatrix::from_row_slice(d, d, &fit.coef),
        rank_deficient: fit.rank_deficient,
        weighted_mae: 0.0,
    };
    out.weighted_mae = weighted_mae(
        nbhd.members.iter().map(|m| out.predict_encoded(&m.xbar, &m.ybar)),
        targets,
        &w,
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_full, FitConfig};
    use crate::instance::{Instance, InstanceKind, Schema};
    use crate::metric::PsdMatrix;
    use crate::oracle::{FnOracle, MahalanobisOracle};
    use crate::perturb::{build_neighborhood, KernelConfig, NeighborhoodConfig, NumericStats, Perturber};

    fn nbhd(left: &[f64], right: &[f64], n: usize, seed: u64) -> Neighborhood {
        let m = left.len();
        let cfg = NeighborhoodConfig {
            schema: Schema::numeric(m),
            kernel: KernelConfig::default_for(InstanceKind::Numeric),
            perturber: Perturber::Gaussian(NumericStats {
                mean: vec![0.0; m],
                std: vec![1.0; m],
            }),
        };
        let pair = InstancePair::new(Instance::Numeric(left.to_vec()), Instance::Numeric(right.to_vec())).unwrap();
        build_neighborhood(&pair, n, &cfg, seed, None).unwrap()
    }

    fn vals(i: &Instance) -> &[f64] {
        i.as_numeric().unwrap()
    }

    #[test]
    fn linear_oracle_recovered() {
        let nb = nbhd(&[0.0, 1.0], &[1.0, -1.0], 2000, 1);
        let oracle = FnOracle::new("lin", false, |a: &Instance, b: &Instance| {
            0.5 + 2.0 * vals(a)[0] - vals(a)[1] + 0.25 * vals(b)[0] + 3.0 * vals(b)[1]
        });
        let s = fit_concat_linear(&nb, &oracle).unwrap();
        assert!(s.weighted_mae < 1e-8, "{}", s.weighted_mae);
        for (g, w) in s.g_x.iter().chain(&s.g_y).zip([2.0, -1.0, 0.25, 3.0]) {
            assert!((g - w).abs() < 1e-5);
        }
        assert!((s.intercept - 0.5).abs() < 1e-5);
    }

    #[test]
    fn constant_oracle_gives_intercept_only() {
        let nb = nbhd(&[0.0, 1.0], &[1.0, -1.0], 50, 2);
        let oracle = FnOracle::new("c", true, |_: &Instance, _: &Instance| 0.7);
        let s = fit_concat_linear(&nb, &oracle).unwrap();
        assert!(s.g_x.iter().chain(&s.g_y).all(|g| g.abs() < 1e-9));
        assert!((s.intercept - 0.7).abs() < 1e-9);
    }

    #[test]
    fn identical_design_is_intercept_only() {
        let pair = InstancePair::new(Instance::Numeric(vec![1.0]), Instance::Numeric(vec![2.0])).unwrap();
        let cfg = NeighborhoodConfig {
            schema: Schema::numeric(1),
            kernel: KernelConfig::default_for(InstanceKind::Numeric),
            perturber: Perturber::Gaussian(NumericStats {
                mean: vec![0.0],
                std: vec![0.0],
            }),
        };
        let nb = build_neighborhood(&pair, 5, &cfg, 0, None).unwrap();
        let s = fit_concat_linear_with_targets(&nb, &[0.4; 5]).unwrap();
        assert_eq!(s.g_x, vec![0.0]);
        assert_eq!(s.g_y, vec![0.0]);
        assert!((s.intercept - 0.4).abs() < 1e-12);
        assert!(s.rank_deficient);
    }

    #[test]
    fn symmetric_quadratic_defeats_linear() {
        // Perturb around a pair whose difference is zero so the quadratic
        // has no first-order signal.
        let a = PsdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let oracle = MahalanobisOracle::new(a);
        let nb = nbhd(&[0.0, 0.0], &[0.0, 0.0], 2000, 3);
        let s = fit_concat_linear(&nb, &oracle).unwrap();
        assert!(s.g_x.iter().chain(&s.g_y).all(|g| g.abs() < 0.3), "{s:?}");
        let full = fit_full(&nb, &oracle, &FitConfig::default()).unwrap();
        assert!(s.weighted_mae > 1.0);
        assert!(full.diagnostics.weighted_mae < s.weighted_mae);
    }

    #[test]
    fn bilinear_oracle_recovered() {
        let a_star = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 2.0, 0.3]);
        let a2 = a_star.clone();
        let nb = nbhd(&[0.3, 1.0], &[1.0, -1.0], 200, 4);
        let oracle = FnOracle::new("bil", false, move |a: &Instance, b: &Instance| {
            let (x, y) = (vals(a), vals(b));
            (0..2).flat_map(|j| (0..2).map(move |k| (j, k))).map(|(j, k)| x[j] * a2[(j, k)] * y[k]).sum()
        });
        let s = fit_bilinear(&nb, &oracle).unwrap();
        assert!((&s.matrix - &a_star).abs().max() < 1e-6);
        assert!(!s.rank_deficient);
    }

    #[test]
    fn bilinear_rank_deficient_is_flagged_and_minimum_norm() {
        let pair = InstancePair::new(Instance::Numeric(vec![1.0, 0.0]), Instance::Numeric(vec![1.0, 0.0])).unwrap();
        let cfg = NeighborhoodConfig {
            schema: Schema::numeric(2),
            kernel: KernelConfig::default_for(InstanceKind::Numeric),
            perturber: Perturber::Gaussian(NumericStats {
                mean: vec![0.0; 2],
                std: vec![0.0; 2],
            }),
        };
        let nb = build_neighborhood(&pair, 3, &cfg, 0, None).unwrap();
        let s = fit_bilinear_with_targets(&nb, &[2.0; 3]).unwrap();
        assert!(s.rank_deficient);
        // Only the (0,0) outer-product entry is non-zero in the design.
        assert!((s.matrix[(0, 0)] - 2.0).abs() < 1e-5);
        assert_eq!(s.matrix[(0, 1)], 0.0);
        assert_eq!(s.matrix[(1, 1)], 0.0);
    }

    #[test]
    fn fits_are_deterministic_and_shift_covariant() {
        let nb = nbhd(&[0.0, 1.0], &[1.0, -1.0], 60, 5);
        let oracle = FnOracle::new("q", true, |a: &Instance, b: &Instance| {
            (vals(a)[0] - vals(b)[0]).powi(2) + vals(a)[1].sin()
        });
        let t = pair_distances(&oracle, &nb.pairs()).unwrap();
        let a = fit_concat_linear_with_targets(&nb, &t).unwrap();
        assert_eq!(a, fit_concat_linear_with_targets(&nb, &t).unwrap());
        let shifted: Vec<f64> = t.iter().map(|v| v + 5.0).collect();
        let b = fit_concat_linear_with_targets(&nb, &shifted).unwrap();
        assert!((b.intercept - a.intercept - 5.0).abs() < 1e-9);
        for (x, y) in a.g_x.iter().zip(&b.g_x) {
            assert!((x - y).abs() < 1e-9);
        }
        assert_eq!(fit_bilinear_with_targets(&nb, &t).unwrap(), fit_bilinear_with_targets(&nb, &t).unwrap());
    }
}
