//! Conditional categorical perturbation.
//!
//! For every feature a multinomial logistic model estimates
//! `p(category | other features)`. Sampling adds `bias` to the probability
//! of the instance's own category, renormalizes, and draws.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;

pub const DEFAULT_BIAS: f64 = 0.1;
pub const DEFAULT_RIDGE: f64 = 1e-3;
pub const DEFAULT_EPOCHS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum ConditionalEstimator {
    /// Softmax over `weights * [one_hot(x_-j); 1]`, one row per category.
    Logistic { weights: Vec<Vec<f64>> },
    /// Fixed probabilities that ignore the other features.
    Fixed { probabilities: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPerturber {
    pub cardinalities: Vec<usize>,
    pub estimators: Vec<ConditionalEstimator>,
    pub bias: f64,
}

/// One-hot of every feature except `skip`, followed by a constant 1.
fn context_features(x: &[usize], cardinalities: &[usize], skip: usize) -> Vec<f64> {
    let dim: usize = cardinalities
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != skip)
        .map(|(_, c)| c)
        .sum();
    let mut out = vec![0.0; dim + 1];
    let mut offset = 0;
    for (l, (&c, &card)) in x.iter().zip(cardinalities).enumerate() {
        if l == skip {
            continue;
        }
        out[offset + c] = 1.0;
        offset += card;
    }
    out[dim] = 1.0;
    out
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

impl CategoricalPerturber {
    /// Trains one logistic model per feature by full-batch gradient descent
    /// with an L2 ridge.
    pub fn train(
        rows: &[Vec<usize>],
        cardinalities: &[usize],
        bias: f64,
        ridge: f64,
        epochs: usize,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("no rows to train the categorical model".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cardinalities.len() {
                return Err(Error::DimensionMismatch {
                    expected: cardinalities.len(),
                    got: r.len(),
                });
            }
            if let Some((j, c)) = r.iter().enumerate().find(|(j, c)| **c >= cardinalities[*j]) {
                return Err(Error::Schema(format!(
                    "row {i}: category {c} out of range for feature {j}"
                )));
            }
        }
        let m = cardinalities.len();
        let n = rows.len() as f64;
        let mut estimators = Vec::with_capacity(m);
        for j in 0..m {
            let k = cardinalities[j];
            let xs: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| context_features(r, cardinalities, j))
                .collect();
            let dim = xs[0].len();
            let mut w = DMatrix::<f64>::zeros(k, dim);
            if k > 1 {
                // Softmax cross-entropy has curvature at most ||x||^2 / 2.
                let lipschitz = 0.5 * m as f64 + ridge;
                let lr = 1.0 / lipschitz;
                let mut p = vec![0.0; k];
                for _ in 0..epochs {
                    let mut grad = DMatrix::<f64>::zeros(k, dim);
                    for (x, r) in xs.iter().zip(rows) {
                        for c in 0..k {
                            p[c] = (0..dim).map(|t| w[(c, t)] * x[t]).sum();
                        }
                        softmax_in_place(&mut p);
                        p[r[j]] -= 1.0;
                        for c in 0..k {
                            if p[c] == 0.0 {
                                continue;
                            }
                            for t in 0..dim {
                                if x[t] != 0.0 {
                                    grad[(c, t)] += p[c] * x[t];
                                }
                            }
                        }
                    }
                    grad /= n;
                    grad += &w * ridge;
                    w -= grad * lr;
                }
            }
            estimators.push(ConditionalEstimator::Logistic {
                weights: crate::metric::matrix_to_rows(&w),
            });
        }
        Ok(CategoricalPerturber {
            cardinalities: cardinalities.to_vec(),
            estimators,
            bias,
        })
    }

    pub fn fixed(probabilities: Vec<Vec<f64>>, bias: f64) -> Result<Self> {
        let cardinalities = probabilities.iter().map(Vec::len).collect();
        for p in &probabilities {
            let s: f64 = p.iter().sum();
            if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("invalid probability vector {p:?}")));
            }
        }
        Ok(CategoricalPerturber {
            cardinalities,
            estimators: probabilities
                .into_iter()
                .map(|probabilities| ConditionalEstimator::Fixed { probabilities })
                .collect(),
            bias,
        })
    }

    /// Model probabilities `p(. | x_-j)` before the bias is applied.
    pub fn conditional(&self, x: &[usize], j: usize) -> Vec<f64> {
        match &self.estimators[j] {
            ConditionalEstimator::Fixed { probabilities } => probabilities.clone(),
            ConditionalEstimator::Logistic { weights } => {
                let feats = context_features(x, &self.cardinalities, j);
                let mut z: Vec<f64> = weights
                    .iter()
                    .map(|row| row.iter().zip(&feats).map(|(a, b)| a * b).sum())
                    .collect();
                softmax_in_place(&mut z);
                z
            }
        }
    }

    /// Conditional probabilities with `bias` added to the current category,
    /// renormalized to sum to one.
    pub fn biased_conditional(&self, x: &[usize], j: usize) -> Vec<f64> {
        let mut p = self.conditional(x, j);
        p[x[j]] += self.bias;
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }

    fn validate(&self, x: &[usize]) -> Result<()> {
        if !(self.bias >= 0.0 && self.bias.is_finite()) {
            return Err(Error::Config(format!("bias must be >= 0, got {}", self.bias)));
        }
        if x.len() != self.cardinalities.len() {
            return Err(Error::DimensionMismatch {
                expected: self.cardinalities.len(),
                got: x.len(),
            });
        }
        for (j, (&c, &card)) in x.iter().zip(&self.cardinalities).enumerate() {
            if c >= card {
                return Err(Error::Schema(format!(
                    "unseen category {c} for feature {j} (cardinality {card})"
                )));
            }
        }
        Ok(())
    }
}

fn draw(cdf_source: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in cdf_source.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    cdf_source.len() - 1
}

/// Draws `n` perturbations of `x`, each feature resampled from its biased
/// conditional distribution given the original values of the others.
pub fn perturb_categorical(
    x: &[usize],
    n: usize,
    model: &CategoricalPerturber,
    seed: u64,
) -> Result<Vec<Instance>> {
    model.validate(x)?;
    let probs: Vec<Vec<f64>> = (0..x.len()).map(|j| model.biased_conditional(x, j)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            Instance::Categorical(
                probs
                    .iter()
                    .enumerate()
                    .map(|(j, p)| if p.len() == 1 { x[j] } else { draw(p, &mut rng) })
                    .collect(),
            )
        })
        .collect())
}
