use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;

use super::{closeness_value, delta_min, direction, direction_distance_vectors, AnalogyConfig};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::fit::PairSurrogate;
use crate::instance::InstancePair;
use crate::oracle::{pair_distance, pair_distances, DistanceOracle};

/// Per-candidate quantities the selection objective is built from.
///
/// `delta_min` must be symmetric in its arguments; implementations
/// canonicalize the index order.
pub trait AnalogyTerms: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Candidates that may be selected.
    fn eligible(&self, i: usize) -> bool;

    /// `(bb(z_i) - bb(x))^2`.
    fn fidelity(&self, i: usize) -> f64;

    /// `G(z_i, x)`.
    fn closeness(&self, i: usize) -> f64;

    fn delta_min(&self, i: usize, j: usize) -> Result<f64>;

    fn pair(&self, _i: usize) -> Option<InstancePair> {
        None
    }

    fn bb_distance(&self, _i: usize) -> Option<f64> {
        None
    }

    fn warnings(&self) -> Vec<String> {
        Vec::new()
    }
}

/// Candidate pairs with their cached black-box distances.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool {
    pub pairs: Vec<InstancePair>,
    pub bb: Vec<f64>,
}

impl CandidatePool {
    pub fn new(pairs: Vec<InstancePair>, oracle: &dyn DistanceOracle) -> Result<Self> {
        let bb = pair_distances(oracle, &pairs)?;
        Self::with_distances(pairs, bb)
    }

    /// Uses distances supplied with the data instead of querying the oracle.
    pub fn with_distances(pairs: Vec<InstancePair>, bb: Vec<f64>) -> Result<Self> {
        if pairs.len() != bb.len() {
            return Err(Error::DimensionMismatch {
                expected: pairs.len(),
                got: bb.len(),
            });
        }
        if let Some(v) = bb.iter().find(|v| !v.is_finite()) {
            return Err(Error::Oracle(format!("non-finite black-box distance {v}")));
        }
        Ok(CandidatePool { pairs, bb })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Terms computed from a candidate pool, an oracle and an embedding.
/// Pair-to-pair distances are computed lazily and cached.
pub struct PoolTerms<'a> {
    pool: &'a CandidatePool,
    oracle: &'a dyn DistanceOracle,
    fidelity: Vec<f64>,
    closeness: Vec<Option<f64>>,
    cache: Mutex<HashMap<(usize, usize), f64>>,
    warnings: Vec<String>,
}

impl<'a> PoolTerms<'a> {
    /// `feat` supplies interpretable distances when `cfg.alpha > 0`.
    pub fn new(
        pool: &'a CandidatePool,
        x: &InstancePair,
        oracle: &'a dyn DistanceOracle,
        phi: &dyn Embedding,
        cfg: &AnalogyConfig,
        feat: Option<&dyn PairSurrogate>,
    ) -> Result<Self> {
        cfg.validate()?;
        let bb_x = pair_distance(oracle, x)?;
        Self::with_target(pool, x, bb_x, oracle, phi, cfg, feat)
    }

    /// As [`PoolTerms::new`] with the explained pair's black-box distance
    /// given.
    pub fn with_target(
        pool: &'a CandidatePool,
        x: &InstancePair,
        bb_x: f64,
        oracle: &'a dyn DistanceOracle,
        phi: &dyn Embedding,
        cfg: &AnalogyConfig,
        feat: Option<&dyn PairSurrogate>,
    ) -> Result<Self> {
        if !bb_x.is_finite() {
            return Err(Error::Oracle(format!("non-finite black-box distance {bb_x}")));
        }
        if cfg.alpha > 0.0 && feat.is_none() {
            return Err(Error::Config(
                "alpha > 0 needs a fitted feature explanation for the explained pair".into(),
            ));
        }
        let dx = direction(x, phi)?
            .ok_or_else(|| Error::ZeroDirection("explained pair has identical embeddings".into()))?;
        let interp_x = match (cfg.alpha > 0.0, feat) {
            (true, Some(f)) => Some(f.predict_pair(x)?),
            _ => None,
        };
        let fidelity = pool.bb.iter().map(|b| (b - bb_x).powi(2)).collect();
        let closeness = pool
            .pairs
            .par_iter()
            .map(|z| -> Result<Option<f64>> {
                let Some(dz) = direction(z, phi)? else {
                    return Ok(None);
                };
                let d = direction_distance_vectors(&dz, &dx)?;
                let interp = match (interp_x, feat) {
                    (Some(ix), Some(f)) => Some((f.predict_pair(z)?, ix)),
                    _ => None,
                };
                closeness_value(d, cfg.alpha, interp).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;
        let warnings = closeness
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .map(|(i, _)| format!("candidate {i} skipped: zero direction vector"))
            .collect();
        Ok(PoolTerms {
            pool,
            oracle,
            fidelity,
            closeness,
            cache: Mutex::new(HashMap::new()),
            warnings,
        })
    }

    /// Number of distinct pair-to-pair distances computed so far.
    pub fn cached_delta_min(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl AnalogyTerms for PoolTerms<'_> {
    fn len(&self) -> usize {
        self.pool.len()
    }

    fn eligible(&self, i: usize) -> bool {
        self.closeness[i].is_some()
    }

    fn fidelity(&self, i: usize) -> f64 {
        self.fidelity[i]
    }

    fn closeness(&self, i: usize) -> f64 {
        self.closeness[i].unwrap_or(f64::NAN)
    }

    fn delta_min(&self, i: usize, j: usize) -> Result<f64> {
        let key = (i.min(j), i.max(j));
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let v = delta_min(&self.pool.pairs[key.0], &self.pool.pairs[key.1], self.oracle)?;
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }

    fn pair(&self, i: usize) -> Option<InstancePair> {
        Some(self.pool.pairs[i].clone())
    }

    fn bb_distance(&self, i: usize) -> Option<f64> {
        Some(self.pool.bb[i])
    }

    fn warnings(&self) -> Vec<String> {
        self.warnings.clone()
    }
}

/// Precomputed terms. A non-finite closeness marks a candidate as
/// ineligible; `delta_min` is read from the upper triangle of a row-major
/// `n x n` array.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayTerms {
    pub fidelity: Vec<f64>,
    pub closeness: Vec<f64>,
    pub delta_min: Vec<f64>,
    pub bb: Option<Vec<f64>>,
}

impl ArrayTerms {
    pub fn new(fidelity: Vec<f64>, closeness: Vec<f64>, delta_min: Vec<f64>) -> Result<Self> {
        let n = fidelity.len();
        if closeness.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: closeness.len(),
            });
        }
        if delta_min.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: delta_min.len(),
            });
        }
        if fidelity.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("fidelity terms must be finite".into()));
        }
        Ok(ArrayTerms {
            fidelity,
            closeness,
            delta_min,
            bb: None,
        })
    }

    /// Builds the fidelity terms from black-box distances of the candidates
    /// and of the explained pair.
    pub fn from_distances(bb: Vec<f64>, bb_x: f64, closeness: Vec<f64>, delta_min: Vec<f64>) -> Result<Self> {
        let fidelity = bb.iter().map(|b| (b - bb_x).powi(2)).collect();
        let mut t = Self::new(fidelity, closeness, delta_min)?;
        t.bb = Some(bb);
        Ok(t)
    }
}

impl AnalogyTerms for ArrayTerms {
    fn len(&self) -> usize {
        self.fidelity.len()
    }

    fn eligible(&self, i: usize) -> bool {
        self.closeness[i].is_finite()
    }

    fn fidelity(&self, i: usize) -> f64 {
        self.fidelity[i]
    }

    fn closeness(&self, i: usize) -> f64 {
        self.closeness[i]
    }

    fn delta_min(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.len();
        let v = self.delta_min[i.min(j) * n + i.max(j)];
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite pair distance at ({i}, {j})")));
        }
        Ok(v)
    }

    fn bb_distance(&self, i: usize) -> Option<f64> {
        self.bb.as_ref().map(|b| b[i])
    }
}
