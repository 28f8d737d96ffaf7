//! Selection of diverse analogous pairs.
//!
//! The objective for a set `S` of candidate pairs explaining `x` is
//!
//! ```text
//! f(S) = c_f * sum_S (bb(z) - bb(x))^2 + l1 * sum_S G(z, x) - l2 * div(S)
//! ```
//!
//! with `G` the closeness of the pair relations and `div` a sum of squared
//! best-matching distances between selected pairs.

mod exhaustive;
mod greedy;
mod terms;

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::instance::{InstanceKind, InstancePair};
use crate::oracle::DistanceOracle;

pub use exhaustive::{exhaustive_select, ExhaustiveResult};
pub use greedy::{ablate, dirsim_select, greedy_select, objective, select_analogies};
pub use terms::{AnalogyTerms, ArrayTerms, CandidatePool, PoolTerms};

pub const DEFAULT_LAMBDA1_TOKENS: f64 = 0.5;
pub const DEFAULT_LAMBDA1_TABULAR: f64 = 1.0;
pub const DEFAULT_LAMBDA2: f64 = 0.01;

pub fn default_lambda1(kind: InstanceKind) -> f64 {
    match kind {
        InstanceKind::Tokens => DEFAULT_LAMBDA1_TOKENS,
        _ => DEFAULT_LAMBDA1_TABULAR,
    }
}

/// How the diversity double sum over the selected set is indexed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DiversityIndexing {
    /// Each unordered pair `{i, j}`, `i != j`, counted once. Adding `w` to
    /// `S` then changes the objective by exactly `-l2 * sum_S dmin^2(w, z)`.
    #[default]
    UnorderedOnce,
    /// The literal `i, j` grid over `S x S`, self-terms included.
    FullGrid,
}

/// One of the three objective terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Fidelity,
    Closeness,
    Diversity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalogyConfig {
    /// Weight of the black-box agreement term (1 unless ablated or rescaled).
    pub fidelity_weight: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub k: usize,
    pub diversity: DiversityIndexing,
}

impl AnalogyConfig {
    pub fn for_kind(kind: InstanceKind, k: usize) -> Self {
        AnalogyConfig {
            fidelity_weight: 1.0,
            lambda1: default_lambda1(kind),
            lambda2: DEFAULT_LAMBDA2,
            alpha: 0.0,
            k,
            diversity: DiversityIndexing::UnorderedOnce,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fidelity weight", self.fidelity_weight),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("alpha", self.alpha),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    /// The configuration with one term removed.
    pub fn without(&self, term: Term) -> Self {
        let mut c = self.clone();
        match term {
            Term::Fidelity => c.fidelity_weight = 0.0,
            Term::Closeness => c.lambda1 = 0.0,
            Term::Diversity => c.lambda2 = 0.0,
        }
        c
    }
}

/// One selected pair and the objective terms at the time it was chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalogyEntry {
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pair: Option<InstancePair>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bb_distance: Option<f64>,
    /// Unweighted `(bb(z) - bb(x))^2`.
    pub fidelity: f64,
    /// Unweighted `G(z, x)`.
    pub closeness: f64,
    /// Unweighted diversity credit against the pairs selected before it.
    pub diversity: f64,
    /// Weighted change of the objective when the pair was added.
    pub marginal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalogySet {
    pub entries: Vec<AnalogyEntry>,
    pub objective: f64,
    pub config: AnalogyConfig,
    pub warnings: Vec<String>,
}

impl AnalogySet {
    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Relation vector `phi(right) - phi(left)`; `None` when it vanishes.
pub fn direction(pair: &InstancePair, phi: &dyn Embedding) -> Result<Option<Vec<f64>>> {
    let a = phi.embed(&pair.left)?;
    let b = phi.embed(&pair.right)?;
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let d: Vec<f64> = b.iter().zip(&a).map(|(b, a)| b - a).collect();
    Ok(if d.iter().all(|v| *v == 0.0) { None } else { Some(d) })
}

/// `1 - cos` between two non-zero direction vectors, in `[0, 2]`.
pub fn direction_distance_vectors(dz: &[f64], dx: &[f64]) -> Result<f64> {
    if dz.len() != dx.len() {
        return Err(Error::DimensionMismatch {
            expected: dx.len(),
            got: dz.len(),
        });
    }
    let cos = crate::embedding::cosine_similarity(dz, dx)
        .ok_or_else(|| Error::ZeroDirection("direction vector is zero".into()))?;
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

pub fn direction_distance(z: &InstancePair, x: &InstancePair, phi: &dyn Embedding) -> Result<f64> {
    let dz = direction(z, phi)?.ok_or_else(|| Error::ZeroDirection(format!("candidate {:?}", z.key())))?;
    let dx = direction(x, phi)?.ok_or_else(|| Error::ZeroDirection(format!("explained pair {:?}", x.key())))?;
    direction_distance_vectors(&dz, &dx)
}

/// `G = D + alpha * (dI_z - dI_x)^2`. The interpretable distances are
/// required only when `alpha > 0`.
pub fn closeness_value(d: f64, alpha: f64, interp: Option<(f64, f64)>) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(d);
    }
    let (dz, dx) = interp.ok_or_else(|| {
        Error::Config("alpha > 0 needs a fitted feature explanation for the explained pair".into())
    })?;
    Ok(d + alpha * (dz - dx).powi(2))
}

/// Closeness of candidate `z` to `x`, applying `feat` to both pairs when
/// `alpha > 0`.
pub fn closeness(
    z: &InstancePair,
    x: &InstancePair,
    alpha: f64,
    phi: &dyn Embedding,
    feat: Option<&dyn crate::fit::PairSurrogate>,
) -> Result<f64> {
    let d = direction_distance(z, x, phi)?;
    let interp = match (alpha > 0.0, feat) {
        (true, Some(f)) => Some((f.predict_pair(z)?, f.predict_pair(x)?)),
        _ => None,
    };
    closeness_value(d, alpha, interp)
}

/// Distance between two pairs under the better of the two matchings of
/// their members.
pub fn delta_min(zi: &InstancePair, zj: &InstancePair, oracle: &dyn DistanceOracle) -> Result<f64> {
    let straight = oracle.distance(&zi.left, &zj.left)? + oracle.distance(&zi.right, &zj.right)?;
    let crossed = oracle.distance(&zi.left, &zj.right)? + oracle.distance(&zi.right, &zj.left)?;
    let v = straight.min(crossed);
    if !v.is_finite() {
        return Err(Error::Oracle(format!("non-finite pair distance {v}")));
    }
    Ok(v)
}
