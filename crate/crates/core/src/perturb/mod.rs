//! Neighbourhood generation around an explained pair and the kernel weights
//! used by the surrogate fits.

mod categorical;
mod numeric;
mod tokens;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, InstanceKind, InstancePair, Schema};
use crate::oracle::DistanceOracle;
use crate::repr::{RepKind, Representation};

pub use categorical::{
    perturb_categorical, CategoricalPerturber, ConditionalEstimator, DEFAULT_BIAS, DEFAULT_EPOCHS,
    DEFAULT_RIDGE,
};
pub use numeric::{perturb_numeric, NumericStats};
pub use tokens::perturb_tokens;

/// Kernel width multiplier: `sigma^2 = 0.5625 * m`.
pub const SIGMA_SQ_PER_FEATURE: f64 = 0.5625;

pub const DEFAULT_SIZE_NUMERIC: usize = 100;
pub const DEFAULT_SIZE_CATEGORICAL: usize = 200;
pub const DEFAULT_SIZE_TOKENS: usize = 10;

pub fn default_neighborhood_size(kind: InstanceKind) -> usize {
    match kind {
        InstanceKind::Numeric => DEFAULT_SIZE_NUMERIC,
        InstanceKind::Categorical => DEFAULT_SIZE_CATEGORICAL,
        InstanceKind::Tokens => DEFAULT_SIZE_TOKENS,
    }
}

/// SplitMix64 step, used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelDistance {
    Manhattan,
    Cosine,
    /// Use the black box itself as the kernel distance.
    Oracle,
}

impl KernelDistance {
    pub fn default_for(kind: InstanceKind) -> Self {
        match kind {
            InstanceKind::Tokens => KernelDistance::Cosine,
            _ => KernelDistance::Manhattan,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// `None` resolves to `0.5625 * m`.
    pub sigma_sq: Option<f64>,
    pub distance: KernelDistance,
}

impl KernelConfig {
    pub fn default_for(kind: InstanceKind) -> Self {
        KernelConfig {
            sigma_sq: None,
            distance: KernelDistance::default_for(kind),
        }
    }

    pub fn resolve_sigma_sq(&self, num_features: usize) -> Result<f64> {
        let s = self
            .sigma_sq
            .unwrap_or(SIGMA_SQ_PER_FEATURE * num_features.max(1) as f64);
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Config(format!("kernel sigma^2 must be > 0, got {s}")));
        }
        Ok(s)
    }
}

fn cosine_distance(dot: f64, na2: f64, nb2: f64) -> f64 {
    if na2 == 0.0 && nb2 == 0.0 {
        0.0
    } else if na2 == 0.0 || nb2 == 0.0 {
        1.0
    } else {
        1.0 - (dot / (na2.sqrt() * nb2.sqrt())).clamp(-1.0, 1.0)
    }
}

fn sorted_intersection(a: &[String], b: &[String]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Kernel distance between two raw instances of the same kind, measured in
/// their interpretable encodings (raw values, dummy coding, word presence).
pub fn instance_distance(
    a: &Instance,
    b: &Instance,
    kind: KernelDistance,
    oracle: Option<&dyn DistanceOracle>,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let d = match (kind, a, b) {
        (KernelDistance::Oracle, _, _) => {
            let o = oracle.ok_or_else(|| {
                Error::Config("oracle kernel distance requested without an oracle".into())
            })?;
            o.distance(a, b)?
        }
        (KernelDistance::Manhattan, Instance::Numeric(x), Instance::Numeric(y)) => {
            x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum()
        }
        (KernelDistance::Cosine, Instance::Numeric(x), Instance::Numeric(y)) => {
            let dot = x.iter().zip(y).map(|(p, q)| p * q).sum();
            cosine_distance(dot, x.iter().map(|v| v * v).sum(), y.iter().map(|v| v * v).sum())
        }
        (KernelDistance::Manhattan, Instance::Categorical(x), Instance::Categorical(y)) => {
            2.0 * x.iter().zip(y).filter(|(p, q)| p != q).count() as f64
        }
        (KernelDistance::Cosine, Instance::Categorical(x), Instance::Categorical(y)) => {
            let same = x.iter().zip(y).filter(|(p, q)| p == q).count() as f64;
            cosine_distance(same, x.len() as f64, y.len() as f64)
        }
        (KernelDistance::Manhattan, Instance::Tokens(x), Instance::Tokens(y)) => {
            let common = sorted_intersection(x, y);
            (x.len() + y.len() - 2 * common) as f64
        }
        (KernelDistance::Cosine, Instance::Tokens(x), Instance::Tokens(y)) => {
            let common = sorted_intersection(x, y) as f64;
            cosine_distance(common, x.len() as f64, y.len() as f64)
        }
        _ => {
            return Err(Error::Schema(format!(
                "kernel distance between {:?} and {:?} instances",
                a.kind(),
                b.kind()
            )))
        }
    };
    if !d.is_finite() {
        return Err(Error::Numerical(format!("non-finite kernel distance {d}")));
    }
    Ok(d)
}

/// Exponential kernel weight of one perturbed pair:
/// `exp(-F(x, x_i) / sigma^2) + exp(-F(y, y_i) / sigma^2)`.
pub fn kernel_weight(f_left: f64, f_right: f64, sigma_sq: f64) -> Result<f64> {
    if !f_left.is_finite() || !f_right.is_finite() {
        return Err(Error::Numerical("non-finite kernel distance".into()));
    }
    if !(sigma_sq > 0.0) {
        return Err(Error::Config(format!("kernel sigma^2 must be > 0, got {sigma_sq}")));
    }
    let w = (-f_left / sigma_sq).exp() + (-f_right / sigma_sq).exp();
    Ok(w.max(f64::MIN_POSITIVE))
}

pub fn pair_weight(
    x: &Instance,
    x_i: &Instance,
    y: &Instance,
    y_i: &Instance,
    cfg: &KernelConfig,
    num_features: usize,
    oracle: Option<&dyn DistanceOracle>,
) -> Result<f64> {
    let sigma_sq = cfg.resolve_sigma_sq(num_features)?;
    kernel_weight(
        instance_distance(x, x_i, cfg.distance, oracle)?,
        instance_distance(y, y_i, cfg.distance, oracle)?,
        sigma_sq,
    )
}

/// How raw instances are perturbed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "perturber", rename_all = "snake_case")]
pub enum Perturber {
    Gaussian(NumericStats),
    Conditional(CategoricalPerturber),
    TokenDropout,
}

impl Perturber {
    fn sample(&self, inst: &Instance, n: usize, seed: u64) -> Result<Vec<Instance>> {
        match (self, inst) {
            (Perturber::Gaussian(stats), Instance::Numeric(x)) => perturb_numeric(x, n, stats, seed),
            (Perturber::Conditional(model), Instance::Categorical(x)) => {
                perturb_categorical(x, n, model, seed)
            }
            (Perturber::TokenDropout, Instance::Tokens(t)) => perturb_tokens(t, n, seed),
            (p, i) => Err(Error::Schema(format!(
                "perturber {:?} cannot perturb {:?} instances",
                p.kind(),
                i.kind()
            ))),
        }
    }

    fn kind(&self) -> InstanceKind {
        match self {
            Perturber::Gaussian(_) => InstanceKind::Numeric,
            Perturber::Conditional(_) => InstanceKind::Categorical,
            Perturber::TokenDropout => InstanceKind::Tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodConfig {
    pub schema: Schema,
    pub kernel: KernelConfig,
    pub perturber: Perturber,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodMember {
    pub left: Instance,
    pub right: Instance,
    pub xbar: Vec<f64>,
    pub ybar: Vec<f64>,
    pub weight: f64,
}

impl NeighborhoodMember {
    pub fn pair(&self) -> InstancePair {
        InstancePair {
            left: self.left.clone(),
            right: self.right.clone(),
        }
    }

    pub fn difference(&self) -> Vec<f64> {
        self.xbar.iter().zip(&self.ybar).map(|(a, b)| a - b).collect()
    }
}

/// Perturbed pairs around an explained pair. Member 0 is the explained pair
/// itself with weight 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub seed: u64,
    pub size: usize,
    pub sigma_sq: f64,
    pub kernel: KernelDistance,
    pub representation: Representation,
    pub members: Vec<NeighborhoodMember>,
}

impl Neighborhood {
    pub fn dim(&self) -> usize {
        self.representation.dim()
    }

    pub fn explained(&self) -> &NeighborhoodMember {
        &self.members[0]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.weight).collect()
    }

    pub fn pairs(&self) -> Vec<InstancePair> {
        self.members.iter().map(NeighborhoodMember::pair).collect()
    }

    /// Builds a neighbourhood directly from already-encoded pairs; used by
    /// the global fit and by callers holding their own perturbations.
    pub fn from_members(
        representation: Representation,
        members: Vec<NeighborhoodMember>,
        seed: u64,
    ) -> Result<Self> {
        let d = representation.dim();
        for m in &members {
            if m.xbar.len() != d || m.ybar.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: m.xbar.len().max(m.ybar.len()),
                });
            }
            if !(m.weight >= 0.0 && m.weight.is_finite()) {
                return Err(Error::Config(format!("invalid weight {}", m.weight)));
            }
        }
        Ok(Neighborhood {
            seed,
            size: members.len(),
            sigma_sq: 1.0,
            kernel: KernelDistance::Manhattan,
            representation,
            members,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Perturbs both members of `pair` independently, pairs the i-th left
/// perturbation with the i-th right one, encodes and weights them.
///
/// The result has exactly `n` members: the unperturbed pair followed by
/// `n - 1` perturbed pairs.
pub fn build_neighborhood(
    pair: &InstancePair,
    n: usize,
    cfg: &NeighborhoodConfig,
    seed: u64,
    oracle: Option<&dyn DistanceOracle>,
) -> Result<Neighborhood> {
    if n == 0 {
        return Err(Error::Config("neighborhood size must be >= 1".into()));
    }
    cfg.schema.validate_pair(pair)?;
    let lefts = cfg.perturber.sample(&pair.left, n - 1, derive_seed(seed, 1))?;
    let rights = cfg.perturber.sample(&pair.right, n - 1, derive_seed(seed, 2))?;

    let representation = match pair.kind() {
        InstanceKind::Tokens => Representation::word_presence([&pair.left, &pair.right])?,
        kind => Representation::for_schema(&cfg.schema, RepKind::default_for(kind))?,
    };
    let num_features = cfg
        .schema
        .num_features()
        .unwrap_or_else(|| representation.dim());
    let sigma_sq = cfg.kernel.resolve_sigma_sq(num_features)?;

    let mut members = Vec::with_capacity(n);
    members.push(NeighborhoodMember {
        left: pair.left.clone(),
        right: pair.right.clone(),
        xbar: representation.encode(&pair.left)?,
        ybar: representation.encode(&pair.right)?,
        weight: 2.0,
    });
    for (l, r) in lefts.into_iter().zip(rights) {
        let weight = kernel_weight(
            instance_distance(&pair.left, &l, cfg.kernel.distance, oracle)?,
            instance_distance(&pair.right, &r, cfg.kernel.distance, oracle)?,
            sigma_sq,
        )?;
        members.push(NeighborhoodMember {
            xbar: representation.encode(&l)?,
            ybar: representation.encode(&r)?,
            left: l,
            right: r,
            weight,
        });
    }
    Ok(Neighborhood {
        seed,
        size: n,
        sigma_sq,
        kernel: cfg.kernel.distance,
        representation,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(v: &[f64]) -> Instance {
        Instance::Numeric(v.to_vec())
    }

    fn numeric_cfg(m: usize, std: f64) -> NeighborhoodConfig {
        NeighborhoodConfig {
            schema: Schema::numeric(m),
            kernel: KernelConfig::default_for(InstanceKind::Numeric),
            perturber: Perturber::Gaussian(NumericStats {
                mean: vec![0.0; m],
                std: vec![std; m],
            }),
        }
    }

    #[test]
    fn unperturbed_pair_weight_is_two() {
        let cfg = KernelConfig::default_for(InstanceKind::Numeric);
        let (x, y) = (num(&[1.0, 2.0]), num(&[0.0, 0.0]));
        assert_eq!(pair_weight(&x, &x, &y, &y, &cfg, 2, None).unwrap(), 2.0);
    }

    #[test]
    fn closed_form_kernel() {
        // F(x, x_i) = sigma^2 exactly: 0.5625 * 4 = 2.25.
        let cfg = KernelConfig::default_for(InstanceKind::Numeric);
        let x = num(&[0.0, 0.0, 0.0, 0.0]);
        let xi = num(&[1.0, 1.0, 0.25, 0.0]);
        let w = pair_weight(&x, &xi, &x, &x, &cfg, 4, None).unwrap();
        assert!((w - (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        assert!((w - 1.3679).abs() < 1e-4);
    }

    #[test]
    fn default_sigma() {
        let cfg = KernelConfig::default_for(InstanceKind::Numeric);
        assert_eq!(cfg.resolve_sigma_sq(4).unwrap(), 2.25);
        let bad = KernelConfig {
            sigma_sq: Some(0.0),
            ..cfg
        };
        assert!(bad.resolve_sigma_sq(4).is_err());
    }

    #[test]
    fn non_finite_kernel_distance_is_error() {
        assert!(kernel_weight(f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn instance_distances() {
        let d = |a: &Instance, b: &Instance, k| instance_distance(a, b, k, None).unwrap();
        assert_eq!(d(&num(&[1.0, 2.0]), &num(&[0.0, 4.0]), KernelDistance::Manhattan), 3.0);
        let (a, b) = (Instance::Categorical(vec![0, 1, 2]), Instance::Categorical(vec![0, 0, 2]));
        assert_eq!(d(&a, &b, KernelDistance::Manhattan), 2.0);
        assert!((d(&a, &b, KernelDistance::Cosine) - 1.0 / 3.0).abs() < 1e-12);
        let (s, t) = (Instance::from_text("a b c d"), Instance::from_text("a b"));
        assert!((d(&s, &t, KernelDistance::Cosine) - (1.0 - 2.0 / 8f64.sqrt())).abs() < 1e-12);
        assert_eq!(d(&s, &t, KernelDistance::Manhattan), 2.0);
    }

    #[test]
    fn singleton_neighborhood() {
        let pair = InstancePair::new(num(&[1.0, 2.0]), num(&[3.0, 4.0])).unwrap();
        let nb = build_neighborhood(&pair, 1, &numeric_cfg(2, 0.0), 0, None).unwrap();
        assert_eq!(nb.size, 1);
        assert_eq!(nb.members.len(), 1);
        assert_eq!(nb.members[0].weight, 2.0);
        assert_eq!(nb.members[0].xbar, vec![1.0, 2.0]);
    }

    #[test]
    fn weights_in_range_and_anchor_is_max() {
        let pair = InstancePair::new(num(&[1.0, 2.0, 0.0]), num(&[3.0, 4.0, 1.0])).unwrap();
        let nb = build_neighborhood(&pair, 100, &numeric_cfg(3, 1.0), 3, None).unwrap();
        assert_eq!(nb.members.len(), 100);
        let w = nb.weights();
        assert!(w.iter().all(|v| *v > 0.0 && *v <= 2.0));
        assert!(w.iter().all(|v| *v <= w[0]));
    }

    #[test]
    fn serialized_neighborhood_is_deterministic() {
        let pair = InstancePair::new(num(&[1.0, 2.0]), num(&[3.0, 4.0])).unwrap();
        let cfg = numeric_cfg(2, 0.5);
        let a = build_neighborhood(&pair, 30, &cfg, 17, None).unwrap().to_json().unwrap();
        let b = build_neighborhood(&pair, 30, &cfg, 17, None).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let back = Neighborhood::from_json(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
    }

    #[test]
    fn token_neighborhood_uses_pair_vocabulary() {
        let pair = InstancePair::new(
            Instance::from_text("a man plays harp"),
            Instance::from_text("a woman plays keyboard"),
        )
        .unwrap();
        let cfg = NeighborhoodConfig {
            schema: Schema::Tokens,
            kernel: KernelConfig::default_for(InstanceKind::Tokens),
            perturber: Perturber::TokenDropout,
        };
        let nb = build_neighborhood(&pair, DEFAULT_SIZE_TOKENS, &cfg, 1, None).unwrap();
        assert_eq!(nb.dim(), 6);
        assert_eq!(nb.sigma_sq, 0.5625 * 6.0);
        assert_eq!(nb.members.len(), 10);
        for m in &nb.members {
            assert!(m.xbar.iter().chain(&m.ybar).all(|v| *v == 0.0 || *v == 1.0));
        }
    }

    #[test]
    fn mismatched_perturber_is_schema_error() {
        let pair = InstancePair::new(num(&[1.0]), num(&[3.0])).unwrap();
        let cfg = NeighborhoodConfig {
            schema: Schema::numeric(1),
            kernel: KernelConfig::default_for(InstanceKind::Numeric),
            perturber: Perturber::TokenDropout,
        };
        assert!(matches!(build_neighborhood(&pair, 5, &cfg, 0, None), Err(Error::Schema(_))));
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
    }
}
