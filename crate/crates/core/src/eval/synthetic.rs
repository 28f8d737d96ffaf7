//! Synthetic black boxes with known structure and datasets drawn for them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, InstancePair, Schema};
use crate::metric::{quadratic_form, PsdMatrix};
use crate::oracle::DistanceOracle;
use crate::perturb::{derive_seed, NumericStats};

/// `L L^T / d` with standard normal `L`.
pub fn random_psd(d: usize, rng: &mut impl Rng) -> PsdMatrix {
    let l: nalgebra::DMatrix<f64> = nalgebra::DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let m: nalgebra::DMatrix<f64> = &l * l.transpose() / d as f64;
    PsdMatrix::new(crate::metric::symmetrize(&m)).expect("Gram matrices are PSD")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "oracle", rename_all = "snake_case")]
pub enum SyntheticOracle {
    /// `scale * u^T A u` with `u = x - y`.
    Quadratic { matrix: PsdMatrix, scale: f64 },
    /// `sqrt(1 + u^T A u) - 1 + amplitude * sum_j sin^2(freq_j u_j)`.
    Smooth {
        matrix: PsdMatrix,
        freq: Vec<f64>,
        amplitude: f64,
    },
}

impl SyntheticOracle {
    pub fn matrix(&self) -> &PsdMatrix {
        match self {
            SyntheticOracle::Quadratic { matrix, .. } | SyntheticOracle::Smooth { matrix, .. } => matrix,
        }
    }

    fn eval(&self, u: &[f64]) -> Result<f64> {
        Ok(match self {
            SyntheticOracle::Quadratic { matrix, scale } => scale * quadratic_form(u, matrix.matrix())?.max(0.0),
            SyntheticOracle::Smooth {
                matrix,
                freq,
                amplitude,
            } => {
                let q = quadratic_form(u, matrix.matrix())?.max(0.0);
                let wave: f64 = u.iter().zip(freq).map(|(v, f)| (f * v).sin().powi(2)).sum();
                (1.0 + q).sqrt() - 1.0 + amplitude * wave
            }
        })
    }
}

impl DistanceOracle for SyntheticOracle {
    fn distance(&self, left: &Instance, right: &Instance) -> Result<f64> {
        let (Some(x), Some(y)) = (left.as_numeric(), right.as_numeric()) else {
            return Err(Error::Schema("synthetic oracles take numeric instances".into()));
        };
        let d = self.matrix().dim();
        if x.len() != d || y.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len().max(y.len()),
            });
        }
        let u: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.eval(&u)
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn id(&self) -> String {
        match self {
            SyntheticOracle::Quadratic { .. } => "synthetic-quadratic".into(),
            SyntheticOracle::Smooth { .. } => "synthetic-smooth".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticFamily {
    Quadratic,
    Smooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: SyntheticFamily,
    pub dim: usize,
    /// Pairs to explain.
    pub pairs: usize,
    /// Candidate pairs for analogy selection.
    pub pool: usize,
    /// Multiplies quadratic distances. Agreement and diversity both grow
    /// with its square, so it only shifts weight away from closeness.
    pub scale: f64,
    /// Standard deviation of the offset between the two members of a pair.
    /// Values well above 1 (the spread of pair positions) make differences
    /// in black-box distance outweigh diversity credits.
    pub spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            family: SyntheticFamily::Quadratic,
            dim: 4,
            pairs: 30,
            pool: 60,
            scale: 1.0,
            spread: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub spec: SyntheticSpec,
    pub oracle: SyntheticOracle,
    pub schema: Schema,
    pub stats: NumericStats,
    pub pairs: Vec<InstancePair>,
    pub pool: Vec<InstancePair>,
}

fn draw_pairs(n: usize, d: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<InstancePair> {
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let y: Vec<f64> = x
                .iter()
                .map(|v| v + spread * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect();
            InstancePair::new(Instance::Numeric(x), Instance::Numeric(y)).expect("same dimension")
        })
        .collect()
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticTask> {
    if spec.dim == 0 || spec.pairs == 0 {
        return Err(Error::Config("synthetic tasks need dim >= 1 and pairs >= 1".into()));
    }
    if !(spec.scale > 0.0 && spec.spread > 0.0) {
        return Err(Error::Config("scale and spread must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 11));
    let matrix = random_psd(spec.dim, &mut rng);
    let oracle = match spec.family {
        SyntheticFamily::Quadratic => SyntheticOracle::Quadratic {
            matrix,
            scale: spec.scale,
        },
        SyntheticFamily::Smooth => SyntheticOracle::Smooth {
            matrix,
            freq: (0..spec.dim).map(|_| rng.random_range(0.5..2.0)).collect(),
            amplitude: 0.2,
        },
    };
    let pairs = draw_pairs(spec.pairs, spec.dim, spec.spread, &mut rng);
    let pool = draw_pairs(spec.pool, spec.dim, spec.spread, &mut rng);
    let rows: Vec<&[f64]> = pairs
        .iter()
        .chain(&pool)
        .flat_map(|p| [p.left.as_numeric().unwrap(), p.right.as_numeric().unwrap()])
        .collect();
    let stats = NumericStats::from_rows(rows)?;
    Ok(SyntheticTask {
        spec: spec.clone(),
        oracle,
        schema: Schema::numeric(spec.dim),
        stats,
        pairs,
        pool,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = generate(&SyntheticSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(other.pairs, generate(&SyntheticSpec { seed: 9, ..Default::default() }).unwrap().pairs);
    }

    #[test]
    fn oracles_are_symmetric_and_vanish_on_identical_pairs() {
        for family in [SyntheticFamily::Quadratic, SyntheticFamily::Smooth] {
            let t = generate(&SyntheticSpec {
                family,
                ..Default::default()
            })
            .unwrap();
            for p in &t.pairs {
                let a = t.oracle.distance(&p.left, &p.right).unwrap();
                assert!((a - t.oracle.distance(&p.right, &p.left).unwrap()).abs() < 1e-12);
                assert!(a >= 0.0);
                assert_eq!(t.oracle.distance(&p.left, &p.left).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn quadratic_oracle_matches_matrix() {
        let t = generate(&SyntheticSpec {
            scale: 3.0,
            ..Default::default()
        })
        .unwrap();
        let p = &t.pairs[0];
        let (x, y) = (p.left.as_numeric().unwrap(), p.right.as_numeric().unwrap());
        let want = 3.0 * crate::metric::mahalanobis_distance(x, y, t.oracle.matrix()).unwrap();
        assert!((t.oracle.distance(&p.left, &p.right).unwrap() - want).abs() < 1e-12);
    }
}
