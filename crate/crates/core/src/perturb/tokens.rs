use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::instance::Instance;

/// Word dropout: each sample removes `r` distinct tokens, `r` uniform on
/// `{0, ..., |x| - 1}`, so at least one token survives.
pub fn perturb_tokens(tokens: &[String], n: usize, seed: u64) -> Result<Vec<Instance>> {
    if tokens.is_empty() {
        return Err(Error::Empty("cannot perturb an empty token set".into()));
    }
    let len = tokens.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let remove = rng.random_range(0..len);
            let dropped = rand::seq::index::sample(&mut rng, len, remove);
            let mut keep = vec![true; len];
            for i in dropped.iter() {
                keep[i] = false;
            }
            Instance::Tokens(
                tokens
                    .iter()
                    .zip(&keep)
                    .filter(|(_, k)| **k)
                    .map(|(t, _)| t.clone())
                    .collect(),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        Instance::from_text(s).as_tokens().unwrap().to_vec()
    }

    #[test]
    fn single_token_is_kept() {
        let out = perturb_tokens(&toks("hello"), 25, 1).unwrap();
        assert!(out.iter().all(|i| i.as_tokens().unwrap() == ["hello"]));
    }

    #[test]
    fn empty_is_error() {
        assert!(perturb_tokens(&[], 3, 1).is_err());
    }

    #[test]
    fn removal_count_is_uniform() {
        let x = toks("a b c d e");
        let n = 100_000;
        let out = perturb_tokens(&x, n, 77).unwrap();
        let mut counts = [0usize; 5];
        for i in &out {
            let t = i.as_tokens().unwrap();
            assert!(!t.is_empty() && t.iter().all(|w| x.contains(w)));
            counts[x.len() - t.len()] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.2).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn seeded() {
        let x = toks("the quick brown fox");
        assert_eq!(perturb_tokens(&x, 40, 3).unwrap(), perturb_tokens(&x, 40, 3).unwrap());
    }
}
