//! Mahalanobis surrogate fits: full PSD matrix (local and global) and the
//! non-negative diagonal variant.

mod solver;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, InstanceKind, InstancePair};
use crate::linalg::{nnls, nnls_forward};
use crate::metric::{contribution_matrix, quadratic_form, rank_by_magnitude, PsdMatrix};
use crate::oracle::{pair_distances, DistanceOracle};
use crate::perturb::{Neighborhood, NeighborhoodMember};
use crate::repr::Representation;

pub use solver::{solve, PsdProblem, SolverOutcome};

pub const DEFAULT_L1_WEIGHT: f64 = 1e-4;
pub const DEFAULT_MAX_ITERS: usize = 2000;
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default vocabulary cap for the global fit on token data.
pub const DEFAULT_GLOBAL_FEATURE_CAP: usize = 500;

pub fn default_max_nonzeros(kind: InstanceKind) -> usize {
    match kind {
        InstanceKind::Numeric => 4,
        InstanceKind::Categorical => 10,
        InstanceKind::Tokens => 5,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixStructure {
    Full,
    /// Off-diagonal entries are projected to zero every step.
    Diagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub l1_weight: f64,
    /// Coefficient cap for the diagonal fit.
    pub max_nonzeros: Option<usize>,
    pub max_iters: usize,
    /// Relative objective decrease below which the solver stops.
    pub tol: f64,
    pub backtrack_shrink: f64,
    pub structure: MatrixStructure,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            l1_weight: DEFAULT_L1_WEIGHT,
            max_nonzeros: None,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            backtrack_shrink: 0.5,
            structure: MatrixStructure::Full,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l1_weight >= 0.0 && self.l1_weight.is_finite()) {
            return Err(Error::Config(format!("l1_weight must be >= 0, got {}", self.l1_weight)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(self.backtrack_shrink > 0.0 && self.backtrack_shrink < 1.0) {
            return Err(Error::Config("backtrack_shrink must lie in (0, 1)".into()));
        }
        if self.max_nonzeros == Some(0) {
            return Err(Error::Config("max_nonzeros must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    FbFull,
    FbDiag,
    GFbFull,
}

impl FitMethod {
    pub fn name(self) -> &'static str {
        match self {
            FitMethod::FbFull => "fbfull",
            FitMethod::FbDiag => "fbdiag",
            FitMethod::GFbFull => "gfbfull",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// Kernel-weighted mean absolute error over the fitted samples.
    pub weighted_mae: f64,
    pub samples: usize,
    pub warnings: Vec<String>,
}

/// The explained pair and its decomposition under the fitted matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplainedPair {
    pub pair: InstancePair,
    pub xbar: Vec<f64>,
    pub ybar: Vec<f64>,
    pub contributions: DMatrix<f64>,
    pub predicted_distance: f64,
    pub bb_distance: f64,
}

impl ExplainedPair {
    pub fn residual(&self) -> f64 {
        self.bb_distance - self.predicted_distance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplanationReport {
    pub method: FitMethod,
    pub representation: Representation,
    /// Columns of the representation the matrix acts on; `None` means all.
    pub feature_subset: Option<Vec<usize>>,
    pub matrix: PsdMatrix,
    /// Non-negative coefficients of the diagonal fit.
    pub diagonal: Option<Vec<f64>>,
    pub explained: Option<ExplainedPair>,
    /// Features ordered by decreasing absolute contribution row sum (local
    /// fits) or absolute matrix row sum (global fit).
    pub ranking: Vec<usize>,
    pub diagnostics: FitDiagnostics,
    pub config: FitConfig,
    pub seed: Option<u64>,
}

impl ExplanationReport {
    /// Names of the features the matrix rows refer to.
    pub fn feature_names(&self) -> Vec<String> {
        let names = self.representation.feature_names();
        match &self.feature_subset {
            Some(s) => s.iter().map(|&j| names[j].clone()).collect(),
            None => names.to_vec(),
        }
    }

    fn restrict(&self, v: Vec<f64>) -> Vec<f64> {
        match &self.feature_subset {
            Some(s) => s.iter().map(|&j| v[j]).collect(),
            None => v,
        }
    }

    /// Interpretable difference of `pair` in the matrix's coordinates.
    pub fn difference(&self, pair: &InstancePair) -> Result<Vec<f64>> {
        if pair.kind() != self.representation_kind() {
            return Err(Error::Schema(format!(
                "report explains {:?} data, got a {:?} pair",
                self.representation_kind(),
                pair.kind()
            )));
        }
        let x = self.restrict(self.representation.encode_lenient(&pair.left)?);
        let y = self.restrict(self.representation.encode_lenient(&pair.right)?);
        Ok(x.iter().zip(&y).map(|(a, b)| a - b).collect())
    }

    fn representation_kind(&self) -> InstanceKind {
        match self.representation {
            Representation::Identity { .. } => InstanceKind::Numeric,
            Representation::DummyCoded { .. } => InstanceKind::Categorical,
            Representation::WordPresence { .. } => InstanceKind::Tokens,
        }
    }

    /// Surrogate distance of an arbitrary pair under the stored matrix.
    pub fn predict(&self, pair: &InstancePair) -> Result<f64> {
        let u = self.difference(pair)?;
        Ok(quadratic_form(&u, self.matrix.matrix())?.max(0.0))
    }

    /// Contribution matrix for an arbitrary pair.
    pub fn contributions_for(&self, pair: &InstancePair) -> Result<DMatrix<f64>> {
        let u = self.difference(pair)?;
        let zeros = vec![0.0; u.len()];
        Ok(contribution_matrix(&u, &zeros, self.matrix.matrix())?.matrix)
    }

    /// Non-zero diagonal coefficients with their feature names.
    pub fn nonzero_coefficients(&self) -> BTreeMap<String, f64> {
        let names = self.feature_names();
        match &self.diagonal {
            Some(a) => a
                .iter()
                .zip(names)
                .filter(|(v, _)| **v != 0.0)
                .map(|(v, n)| (n, *v))
                .collect(),
            None => BTreeMap::new(),
        }
    }
}

/// Shared surrogate interface used by the evaluation metrics.
pub trait PairSurrogate: Send + Sync {
    fn predict_pair(&self, pair: &InstancePair) -> Result<f64>;

    /// Whether the explanation can be applied to a pair other than the one
    /// it was built for.
    fn supports_transfer(&self) -> bool {
        true
    }
}

impl PairSurrogate for ExplanationReport {
    fn predict_pair(&self, pair: &InstancePair) -> Result<f64> {
        self.predict(pair)
    }
}

fn oracle_targets(nbhd: &Neighborhood, oracle: &dyn DistanceOracle) -> Result<Vec<f64>> {
    let targets = pair_distances(oracle, &nbhd.pairs())?;
    if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
        return Err(Error::Oracle(format!("non-finite black-box distance {t}")));
    }
    Ok(targets)
}

fn weighted_mae(pred: &[f64], targets: &[f64], weights: &[f64]) -> f64 {
    let wsum: f64 = weights.iter().sum();
    if wsum == 0.0 {
        return 0.0;
    }
    pred.iter()
        .zip(targets)
        .zip(weights)
        .map(|((p, t), w)| w * (p - t).abs())
        .sum::<f64>()
        / wsum
}

fn explain_member(
    member: &NeighborhoodMember,
    matrix: &PsdMatrix,
    bb_distance: f64,
) -> Result<ExplainedPair> {
    let contributions = contribution_matrix(&member.xbar, &member.ybar, matrix.matrix())?.matrix;
    let u = member.difference();
    Ok(ExplainedPair {
        pair: member.pair(),
        xbar: member.xbar.clone(),
        ybar: member.ybar.clone(),
        contributions,
        predicted_distance: quadratic_form(&u, matrix.matrix())?.max(0.0),
        bb_distance,
    })
}

fn local_ranking(explained: &ExplainedPair) -> Vec<usize> {
    let sums: Vec<f64> = (0..explained.contributions.nrows())
        .map(|j| explained.contributions.row(j).sum())
        .collect();
    rank_by_magnitude(&sums)
}

/// Fits the full PSD surrogate on a neighbourhood from an initial point.
/// `init = None` starts from the zero matrix.
pub fn fit_full_from(
    nbhd: &Neighborhood,
    oracle: &dyn DistanceOracle,
    cfg: &FitConfig,
    init: Option<&DMatrix<f64>>,
) -> Result<ExplanationReport> {
    cfg.validate()?;
    if nbhd.members.is_empty() {
        return Err(Error::Empty("empty neighborhood".into()));
    }
    let targets = oracle_targets(nbhd, oracle)?;
    fit_full_with_targets(nbhd, &targets, cfg, init)
}

/// As [`fit_full_from`] with black-box values already computed.
pub fn fit_full_with_targets(
    nbhd: &Neighborhood,
    targets: &[f64],
    cfg: &FitConfig,
    init: Option<&DMatrix<f64>>,
) -> Result<ExplanationReport> {
    let weights = nbhd.weights();
    let problem = PsdProblem::new(
        nbhd.members.iter().map(NeighborhoodMember::difference).collect(),
        targets.to_vec(),
        weights.clone(),
    )?;
    let mut warnings = Vec::new();
    if problem.is_degenerate() {
        warnings.push("degenerate neighborhood: all interpretable differences are zero".into());
    }
    let outcome = solve(&problem, cfg, init)?;
    if !outcome.converged {
        warnings.push(format!(
            "solver did not converge within {} iterations; returning best iterate",
            cfg.max_iters
        ));
    }
    if outcome.history.windows(2).any(|w| w[1] > w[0]) {
        warnings.push("objective increased between accepted iterates".into());
    }
    let matrix = PsdMatrix::from_projection(outcome.matrix.clone());
    let pred = problem.predictions(matrix.matrix());
    let explained = explain_member(&nbhd.members[0], &matrix, targets[0])?;
    let ranking = local_ranking(&explained);
    let method = match cfg.structure {
        MatrixStructure::Full => FitMethod::FbFull,
        MatrixStructure::Diagonal => FitMethod::FbDiag,
    };
    let diagonal = match cfg.structure {
        MatrixStructure::Diagonal => Some(matrix.matrix().diagonal().iter().copied().collect()),
        MatrixStructure::Full => None,
    };
    Ok(ExplanationReport {
        method,
        representation: nbhd.representation.clone(),
        feature_subset: None,
        matrix,
        diagonal,
        explained: Some(explained),
        ranking,
        diagnostics: FitDiagnostics {
            iterations: outcome.iterations,
            converged: outcome.converged,
            objective: outcome.objective,
            weighted_mae: weighted_mae(&pred, targets, &weights),
            samples: targets.len(),
            warnings,
        },
        config: cfg.clone(),
        seed: Some(nbhd.seed),
    })
}

/// FbFull: local PSD Mahalanobis surrogate.
pub fn fit_full(
    nbhd: &Neighborhood,
    oracle: &dyn DistanceOracle,
    cfg: &FitConfig,
) -> Result<ExplanationReport> {
    fit_full_from(nbhd, oracle, cfg, None)
}

/// Weighted non-negative least squares on squared differences.
pub(crate) fn solve_diagonal(
    diffs: &[Vec<f64>],
    targets: &[f64],
    weights: &[f64],
    max_nonzeros: Option<usize>,
) -> Result<Vec<f64>> {
    let n = diffs.len();
    let d = diffs.first().map_or(0, Vec::len);
    let design = DMatrix::from_fn(n, d, |i, j| weights[i].sqrt() * diffs[i][j] * diffs[i][j]);
    let rhs: Vec<f64> = targets
        .iter()
        .zip(weights)
        .map(|(t, w)| w.sqrt() * t)
        .collect();
    match max_nonzeros {
        Some(k) => nnls_forward(&design, &rhs, k),
        None => nnls(&design, &rhs),
    }
}

/// FbDiag: `min_{a >= 0} sum_i w_i (t_i - a^T s_i)^2` with
/// `s_ij = (xbar_ij - ybar_ij)^2`, optionally capped at `max_nonzeros`
/// coefficients chosen by forward selection.
pub fn fit_diag(
    nbhd: &Neighborhood,
    oracle: &dyn DistanceOracle,
    cfg: &FitConfig,
) -> Result<ExplanationReport> {
    cfg.validate()?;
    if nbhd.members.is_empty() {
        return Err(Error::Empty("empty neighborhood".into()));
    }
    let targets = oracle_targets(nbhd, oracle)?;
    fit_diag_with_targets(nbhd, &targets, cfg)
}

pub fn fit_diag_with_targets(
    nbhd: &Neighborhood,
    targets: &[f64],
    cfg: &FitConfig,
) -> Result<ExplanationReport> {
    let weights = nbhd.weights();
    let diffs: Vec<Vec<f64>> = nbhd.members.iter().map(NeighborhoodMember::difference).collect();
    let problem = PsdProblem::new(diffs.clone(), targets.to_vec(), weights.clone())?;
    let mut warnings = Vec::new();
    let a = if problem.is_degenerate() {
        warnings.push("degenerate neighborhood: all interpretable differences are zero".into());
        vec![0.0; nbhd.dim()]
    } else {
        solve_diagonal(&diffs, targets, &weights, cfg.max_nonzeros)?
    };
    let matrix = PsdMatrix::from_diagonal(&a)?;
    let pred = problem.predictions(matrix.matrix());
    let explained = explain_member(&nbhd.members[0], &matrix, targets[0])?;
    let ranking = local_ranking(&explained);
    Ok(ExplanationReport {
        method: FitMethod::FbDiag,
        representation: nbhd.representation.clone(),
        feature_subset: None,
        diagnostics: FitDiagnostics {
            iterations: 1,
            converged: true,
            objective: problem.loss(matrix.matrix()),
            weighted_mae: weighted_mae(&pred, targets, &weights),
            samples: targets.len(),
            warnings,
        },
        matrix,
        diagonal: Some(a),
        explained: Some(explained),
        ranking,
        config: cfg.clone(),
        seed: Some(nbhd.seed),
    })
}

/// Chooses representation columns for the global fit.
pub type FeatureSelector<'a> = dyn Fn(&Representation, &[InstancePair]) -> Vec<usize> + 'a;

/// GFbFull: one PSD matrix for a whole dataset of pairs, uniform weights.
pub fn fit_global(
    pairs: &[InstancePair],
    representation: &Representation,
    oracle: &dyn DistanceOracle,
    cfg: &FitConfig,
    selector: Option<&FeatureSelector<'_>>,
) -> Result<ExplanationReport> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("global fit needs at least one pair".into()));
    }
    let targets = pair_distances(oracle, pairs)?;
    fit_global_with_targets(pairs, &targets, representation, cfg, selector)
}

pub fn fit_global_with_targets(
    pairs: &[InstancePair],
    targets: &[f64],
    representation: &Representation,
    cfg: &FitConfig,
    selector: Option<&FeatureSelector<'_>>,
) -> Result<ExplanationReport> {
    let subset = selector.map(|f| {
        let mut s = f(representation, pairs);
        s.sort_unstable();
        s.dedup();
        s
    });
    if let Some(s) = &subset {
        if let Some(bad) = s.iter().find(|&&j| j >= representation.dim()) {
            return Err(Error::Config(format!("selected feature {bad} out of range")));
        }
    }
    let diffs: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| {
            let x = representation.encode_lenient(&p.left)?;
            let y = representation.encode_lenient(&p.right)?;
            let u: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            Ok(match &subset {
                Some(s) => s.iter().map(|&j| u[j]).collect(),
                None => u,
            })
        })
        .collect::<Result<_>>()?;
    let weights = vec![1.0; pairs.len()];
    let problem = PsdProblem::new(diffs, targets.to_vec(), weights.clone())?;
    let mut warnings = Vec::new();
    if problem.is_degenerate() {
        warnings.push("degenerate dataset: all interpretable differences are zero".into());
    }
    let outcome = solve(&problem, cfg, None)?;
    if !outcome.converged {
        warnings.push(format!(
            "solver did not converge within {} iterations; returning best iterate",
            cfg.max_iters
        ));
    }
    let matrix = PsdMatrix::from_projection(outcome.matrix);
    let pred = problem.predictions(matrix.matrix());
    let row_sums: Vec<f64> = (0..matrix.dim())
        .map(|j| matrix.matrix().row(j).sum())
        .collect();
    Ok(ExplanationReport {
        method: FitMethod::GFbFull,
        representation: representation.clone(),
        feature_subset: subset,
        ranking: rank_by_magnitude(&row_sums),
        matrix,
        diagonal: None,
        explained: None,
        diagnostics: FitDiagnostics {
            iterations: outcome.iterations,
            converged: outcome.converged,
            objective: outcome.objective,
            weighted_mae: weighted_mae(&pred, targets, &weights),
            samples: targets.len(),
            warnings,
        },
        config: cfg.clone(),
        seed: None,
    })
}

/// Selector keeping the `k` vocabulary entries with the highest summed
/// tf-idf over the dataset (binary term frequency, smoothed idf).
pub fn top_tfidf_selector(k: usize) -> impl Fn(&Representation, &[InstancePair]) -> Vec<usize> {
    move |rep, pairs| {
        let Representation::WordPresence { vocabulary } = rep else {
            return (0..rep.dim()).collect();
        };
        let docs: Vec<&Instance> = pairs.iter().flat_map(|p| [&p.left, &p.right]).collect();
        let n = docs.len() as f64;
        let mut df = vec![0usize; vocabulary.len()];
        for doc in &docs {
            if let Instance::Tokens(t) = doc {
                for tok in t {
                    if let Ok(i) = vocabulary.binary_search(tok) {
                        df[i] += 1;
                    }
                }
            }
        }
        let scores: Vec<f64> = df
            .iter()
            .map(|&c| c as f64 * (((1.0 + n) / (1.0 + c as f64)).ln() + 1.0))
            .collect();
        let mut order = rank_by_magnitude(&scores);
        order.truncate(k);
        order
    }
}

#[cfg(test)]
mod tests;
