use super::terms::AnalogyTerms;
use super::{AnalogyConfig, DiversityIndexing};
use crate::error::{Error, Result};

/// Outcome of enumerating every `k`-subset of the eligible candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct ExhaustiveResult {
    /// Lexicographically first optimal subset, ascending indices.
    pub best: Vec<usize>,
    pub best_objective: f64,
    pub subsets: usize,
}

/// Brute-force minimizer of the selection objective, written independently
/// of the greedy code path so the two can check each other.
pub fn exhaustive_select(terms: &dyn AnalogyTerms, cfg: &AnalogyConfig) -> Result<ExhaustiveResult> {
    cfg.validate()?;
    let eligible: Vec<usize> = (0..terms.len()).filter(|&i| terms.eligible(i)).collect();
    let n = eligible.len();
    let k = cfg.k;
    if n < k {
        return Err(Error::Empty(format!("pool has {n} eligible candidates, {k} requested")));
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut subsets = 0;
    loop {
        let set: Vec<usize> = idx.iter().map(|&p| eligible[p]).collect();
        let mut f = 0.0;
        for &i in &set {
            f += cfg.fidelity_weight * terms.fidelity(i);
            f += cfg.lambda1 * terms.closeness(i);
        }
        let mut div = 0.0;
        for (a, &i) in set.iter().enumerate() {
            for (b, &j) in set.iter().enumerate() {
                let counted = match cfg.diversity {
                    DiversityIndexing::UnorderedOnce => a < b,
                    DiversityIndexing::FullGrid => true,
                };
                if counted {
                    let d = terms.delta_min(i, j)?;
                    div += d * d;
                }
            }
        }
        f -= cfg.lambda2 * div;
        subsets += 1;
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, set));
        }

        // Next combination in lexicographic order.
        let mut p = k;
        loop {
            if p == 0 {
                let (best_objective, best) = best.unwrap();
                return Ok(ExhaustiveResult {
                    best,
                    best_objective,
                    subsets,
                });
            }
            p -= 1;
            if idx[p] < n - k + p {
                break;
            }
        }
        idx[p] += 1;
        for q in p + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}
