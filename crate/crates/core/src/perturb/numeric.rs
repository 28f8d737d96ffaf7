use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;

/// Per-feature Gaussian statistics, normally estimated on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NumericStats {
    /// Sample mean and (population) standard deviation per column.
    pub fn from_rows<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let first = rows
            .first()
            .ok_or_else(|| Error::Empty("no rows to estimate statistics from".into()))?;
        let m = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; m];
        for r in &rows {
            if r.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: r.len(),
                });
            }
            for (acc, v) in mean.iter_mut().zip(r.iter()) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; m];
        for r in &rows {
            for j in 0..m {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(NumericStats { mean, std })
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.std.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.std.len(),
            });
        }
        if let Some(s) = self.std.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Config(format!("standard deviation must be finite and >= 0, got {s}")));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("non-finite mean".into()));
        }
        Ok(())
    }
}

/// Draws `n` samples with coordinate `j` distributed as `Normal(x_j, std_j)`.
pub fn perturb_numeric(x: &[f64], n: usize, stats: &NumericStats, seed: u64) -> Result<Vec<Instance>> {
    stats.validate(x.len())?;
    let normals: Vec<Normal<f64>> = x
        .iter()
        .zip(&stats.std)
        .map(|(&mu, &s)| Normal::new(mu, s).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            Instance::Numeric(
                normals
                    .iter()
                    .zip(x)
                    .zip(&stats.std)
                    .map(|((dist, &mu), &s)| if s == 0.0 { mu } else { dist.sample(&mut rng) })
                    .collect(),
            )
        })
        .collect())
}
