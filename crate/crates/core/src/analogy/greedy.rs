use rayon::prelude::*;

use super::terms::{AnalogyTerms, CandidatePool, PoolTerms};
use super::{AnalogyConfig, AnalogyEntry, AnalogySet, DiversityIndexing, Term};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::fit::PairSurrogate;
use crate::instance::InstancePair;
use crate::oracle::DistanceOracle;

/// Unweighted diversity credit of adding `a` to `selected`.
fn diversity_credit(terms: &dyn AnalogyTerms, a: usize, selected: &[usize], indexing: DiversityIndexing) -> Result<f64> {
    let mut s = 0.0;
    for &b in selected {
        s += terms.delta_min(a, b)?.powi(2);
    }
    Ok(match indexing {
        DiversityIndexing::UnorderedOnce => s,
        DiversityIndexing::FullGrid => 2.0 * s + terms.delta_min(a, a)?.powi(2),
    })
}

/// Value of the selection objective on `set` (pool indices).
pub fn objective(terms: &dyn AnalogyTerms, set: &[usize], cfg: &AnalogyConfig) -> Result<f64> {
    let mut f = 0.0;
    for (pos, &i) in set.iter().enumerate() {
        if i >= terms.len() {
            return Err(Error::Config(format!("index {i} outside a pool of {}", terms.len())));
        }
        f += cfg.fidelity_weight * terms.fidelity(i) + cfg.lambda1 * terms.closeness(i);
        if cfg.lambda2 != 0.0 {
            f -= cfg.lambda2 * diversity_credit(terms, i, &set[..pos], cfg.diversity)?;
        }
    }
    Ok(f)
}

/// Greedy minimization: each step adds the candidate with the smallest
/// marginal change of the objective; ties go to the lowest index.
pub fn greedy_select(terms: &dyn AnalogyTerms, cfg: &AnalogyConfig) -> Result<AnalogySet> {
    cfg.validate()?;
    let mut remaining: Vec<usize> = (0..terms.len()).filter(|&i| terms.eligible(i)).collect();
    if remaining.len() < cfg.k {
        return Err(Error::Empty(format!(
            "pool has {} eligible candidates, {} requested",
            remaining.len(),
            cfg.k
        )));
    }
    let mut selected: Vec<usize> = Vec::with_capacity(cfg.k);
    let mut entries = Vec::with_capacity(cfg.k);
    let mut total = 0.0;
    for _ in 0..cfg.k {
        let scores = remaining
            .par_iter()
            .map(|&a| -> Result<(f64, f64)> {
                let credit = if cfg.lambda2 != 0.0 {
                    diversity_credit(terms, a, &selected, cfg.diversity)?
                } else {
                    0.0
                };
                let m = cfg.fidelity_weight * terms.fidelity(a) + cfg.lambda1 * terms.closeness(a)
                    - cfg.lambda2 * credit;
                Ok((m, credit))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut best = 0;
        for (pos, (m, _)) in scores.iter().enumerate() {
            if m.is_nan() {
                return Err(Error::Numerical(format!("objective undefined for candidate {}", remaining[pos])));
            }
            if *m < scores[best].0 {
                best = pos;
            }
        }
        let a = remaining.remove(best);
        let (marginal, credit) = scores[best];
        total += marginal;
        entries.push(AnalogyEntry {
            index: a,
            pair: terms.pair(a),
            bb_distance: terms.bb_distance(a),
            fidelity: terms.fidelity(a),
            closeness: terms.closeness(a),
            diversity: credit,
            marginal,
        });
        selected.push(a);
    }
    Ok(AnalogySet {
        entries,
        objective: total,
        config: cfg.clone(),
        warnings: terms.warnings(),
    })
}

/// Greedy selection with one objective term removed.
pub fn ablate(terms: &dyn AnalogyTerms, cfg: &AnalogyConfig, drop: Term) -> Result<AnalogySet> {
    greedy_select(terms, &cfg.without(drop))
}

/// The `k` candidates with the smallest closeness, ascending, index
/// tie-break. Build `terms` with `alpha = 0` for pure direction similarity.
pub fn dirsim_select(terms: &dyn AnalogyTerms, k: usize) -> Result<AnalogySet> {
    let mut order: Vec<usize> = (0..terms.len()).filter(|&i| terms.eligible(i)).collect();
    if order.len() < k || k == 0 {
        return Err(Error::Empty(format!(
            "pool has {} eligible candidates, {k} requested",
            order.len()
        )));
    }
    order.sort_by(|&a, &b| terms.closeness(a).total_cmp(&terms.closeness(b)).then(a.cmp(&b)));
    let entries: Vec<AnalogyEntry> = order[..k]
        .iter()
        .map(|&i| AnalogyEntry {
            index: i,
            pair: terms.pair(i),
            bb_distance: terms.bb_distance(i),
            fidelity: terms.fidelity(i),
            closeness: terms.closeness(i),
            diversity: 0.0,
            marginal: terms.closeness(i),
        })
        .collect();
    let objective = entries.iter().map(|e| e.closeness).sum();
    Ok(AnalogySet {
        entries,
        objective,
        config: AnalogyConfig {
            fidelity_weight: 0.0,
            lambda1: 1.0,
            lambda2: 0.0,
            alpha: 0.0,
            k,
            diversity: DiversityIndexing::UnorderedOnce,
        },
        warnings: terms.warnings(),
    })
}

/// Builds the pool terms and runs the greedy selection.
pub fn select_analogies(
    pool: &CandidatePool,
    x: &InstancePair,
    oracle: &dyn DistanceOracle,
    phi: &dyn Embedding,
    cfg: &AnalogyConfig,
    feat: Option<&dyn PairSurrogate>,
) -> Result<AnalogySet> {
    let terms = PoolTerms::new(pool, x, oracle, phi, cfg, feat)?;
    greedy_select(&terms, cfg)
}
