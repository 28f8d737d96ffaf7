//! Fidelity metrics and the experiment harness.

mod harness;
pub mod synthetic;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analogy::AnalogySet;
use crate::error::{Error, Result};
use crate::fit::PairSurrogate;
use crate::instance::{InstancePair, Schema};
use crate::oracle::{pair_distance, DistanceOracle};
use crate::perturb::{pair_weight, KernelConfig};
use crate::repr::Representation;

pub use harness::{
    evaluate, explain_pairs, neighborhood_config_for, read_results_csv, sweep_k, write_results_csv,
    write_results_svg, EvalConfig, Method, ResultRow,
};
pub(crate) use harness::{default_embedding, global_representation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: String,
    pub value: f64,
    /// Per-fold values when cross-validated.
    pub folds: Vec<f64>,
    /// Standard error of the mean over folds; 0 without folds.
    pub sem: f64,
}

impl MetricResult {
    pub fn single(metric: impl Into<String>, value: f64) -> Self {
        MetricResult {
            metric: metric.into(),
            value,
            folds: Vec::new(),
            sem: 0.0,
        }
    }

    /// Mean over folds with `SEM = sample std / sqrt(#folds)`.
    pub fn from_folds(metric: impl Into<String>, folds: Vec<f64>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::Empty("no folds".into()));
        }
        let n = folds.len() as f64;
        let mean = folds.iter().sum::<f64>() / n;
        let sem = if folds.len() > 1 {
            let var = folds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt() / n.sqrt()
        } else {
            0.0
        };
        Ok(MetricResult {
            metric: metric.into(),
            value: mean,
            folds,
            sem,
        })
    }
}

/// Disjoint folds covering `0..n`, assigned after a seeded shuffle.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds == 0 || folds > n {
        return Err(Error::Config(format!("cannot split {n} pairs into {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (pos, i) in order.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// Explanations to evaluate: one per pair, or a single global one.
#[derive(Clone)]
pub enum Surrogates {
    Local(Vec<Arc<dyn PairSurrogate>>),
    Global(Arc<dyn PairSurrogate>),
}

impl Surrogates {
    fn get(&self, i: usize) -> &dyn PairSurrogate {
        match self {
            Surrogates::Local(v) => v[i].as_ref(),
            Surrogates::Global(g) => g.as_ref(),
        }
    }

    fn check_len(&self, n: usize) -> Result<()> {
        match self {
            Surrogates::Local(v) if v.len() != n => Err(Error::DimensionMismatch {
                expected: n,
                got: v.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// Black-box distances of the evaluation pairs.
pub fn truths(pairs: &[InstancePair], oracle: &dyn DistanceOracle) -> Result<Vec<f64>> {
    crate::oracle::pair_distances(oracle, pairs)
}

/// Mean absolute error of predictions against truths.
pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::Empty("no pairs to evaluate".into()));
    }
    Ok(predictions.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum::<f64>() / truths.len() as f64)
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Empty("correlation needs at least two values".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numerical("correlation undefined for constant values".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Own-pair predictions of each explanation.
pub fn predictions(surr: &Surrogates, pairs: &[InstancePair]) -> Result<Vec<f64>> {
    surr.check_len(pairs.len())?;
    pairs.iter().enumerate().map(|(i, p)| surr.get(i).predict_pair(p)).collect()
}

pub fn infidelity(surr: &Surrogates, pairs: &[InstancePair], truths: &[f64]) -> Result<MetricResult> {
    Ok(MetricResult::single("infidelity", mae(&predictions(surr, pairs)?, truths)?))
}

pub fn pearson_fidelity(surr: &Surrogates, pairs: &[InstancePair], truths: &[f64]) -> Result<MetricResult> {
    Ok(MetricResult::single("pearson", pearson(&predictions(surr, pairs)?, truths)?))
}

/// Nearest-neighbour rule of the generalized metrics: the other pair with
/// the largest kernel weight, lowest index on ties.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborRule {
    pub kernel: KernelConfig,
    pub num_features: usize,
}

impl NeighborRule {
    /// Kernel defaults of the schema; token data use the vocabulary of the
    /// evaluation pairs as the feature count.
    pub fn for_pairs(schema: &Schema, pairs: &[InstancePair]) -> Result<Self> {
        let num_features = match schema.num_features() {
            Some(m) => m,
            None => Representation::word_presence(pairs.iter().flat_map(|p| [&p.left, &p.right]))?.dim(),
        };
        Ok(NeighborRule {
            kernel: KernelConfig::default_for(schema.kind()),
            num_features: num_features.max(1),
        })
    }

    pub fn neighbors(&self, pairs: &[InstancePair]) -> Result<Vec<usize>> {
        if pairs.len() < 2 {
            return Err(Error::Empty("the neighbour search needs at least two pairs".into()));
        }
        (0..pairs.len())
            .map(|i| {
                let mut best: Option<(usize, f64)> = None;
                for (j, q) in pairs.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let p = &pairs[i];
                    let w = pair_weight(&p.left, &q.left, &p.right, &q.right, &self.kernel, self.num_features, None)?;
                    if best.is_none_or(|(_, bw)| w > bw) {
                        best = Some((j, w));
                    }
                }
                Ok(best.unwrap().0)
            })
            .collect()
    }
}

/// Each pair is predicted by its nearest neighbour's explanation.
pub fn generalized_infidelity(
    surr: &Surrogates,
    pairs: &[InstancePair],
    truths: &[f64],
    rule: &NeighborRule,
) -> Result<MetricResult> {
    let preds = generalized_predictions(surr, pairs, rule)?;
    Ok(MetricResult::single("generalized_infidelity", mae(&preds, truths)?))
}

pub fn generalized_pearson(
    surr: &Surrogates,
    pairs: &[InstancePair],
    truths: &[f64],
    rule: &NeighborRule,
) -> Result<MetricResult> {
    let preds = generalized_predictions(surr, pairs, rule)?;
    Ok(MetricResult::single("generalized_pearson", pearson(&preds, truths)?))
}

fn generalized_predictions(surr: &Surrogates, pairs: &[InstancePair], rule: &NeighborRule) -> Result<Vec<f64>> {
    surr.check_len(pairs.len())?;
    if (0..pairs.len()).any(|i| !surr.get(i).supports_transfer()) {
        return Err(Error::UnsupportedMetric(
            "generalized metrics need explanations that transfer to other pairs".into(),
        ));
    }
    let nn = rule.neighbors(pairs)?;
    pairs.iter().zip(&nn).map(|(p, &j)| surr.get(j).predict_pair(p)).collect()
}

/// Prediction of an analogy explanation: the mean black-box distance of the
/// selected pairs, querying the oracle where the set carries none.
pub fn analogy_prediction(set: &AnalogySet, oracle: Option<&dyn DistanceOracle>) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("empty analogy set".into()));
    }
    let mut s = 0.0;
    for e in &set.entries {
        s += match (e.bb_distance, &e.pair, oracle) {
            (Some(d), _, _) => d,
            (None, Some(p), Some(o)) => pair_distance(o, p)?,
            _ => {
                return Err(Error::Config(format!(
                    "analogy {} has no black-box distance and no oracle was given",
                    e.index
                )))
            }
        };
    }
    Ok(s / set.len() as f64)
}

/// Analogy sets explain only their own pair.
pub struct AnalogyPrediction(pub f64);

impl PairSurrogate for AnalogyPrediction {
    fn predict_pair(&self, _pair: &InstancePair) -> Result<f64> {
        Ok(self.0)
    }

    fn supports_transfer(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests;
