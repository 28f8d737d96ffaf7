//! The black-box distance abstraction and the built-in oracles.

mod external;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::embedding::{cosine_similarity, Embedding, EmbeddingTable};
use crate::error::{Error, Result};
use crate::instance::{Instance, InstancePair};
use crate::metric::{mahalanobis_distance, PsdMatrix};
use crate::repr::Representation;

pub use external::ExternalOracle;

/// An opaque distance function over pairs of instances.
pub trait DistanceOracle: Send + Sync {
    fn distance(&self, left: &Instance, right: &Instance) -> Result<f64>;

    fn distance_batch(&self, pairs: &[(&Instance, &Instance)]) -> Result<Vec<f64>> {
        pairs.iter().map(|(l, r)| self.distance(l, r)).collect()
    }

    /// Declared symmetry. Spot-checked by [`spot_check_symmetry`], never
    /// enforced per call.
    fn is_symmetric(&self) -> bool {
        false
    }

    fn range_hint(&self) -> Option<(f64, f64)> {
        None
    }

    /// Whether concurrent calls are allowed. [`CachedOracle`] serializes
    /// oracles that return `false`.
    fn concurrent_safe(&self) -> bool {
        true
    }

    fn id(&self) -> String {
        "oracle".to_string()
    }
}

impl<T: DistanceOracle + ?Sized> DistanceOracle for Arc<T> {
    fn distance(&self, left: &Instance, right: &Instance) -> Result<f64> {
        (**self).distance(left, right)
    }
    fn distance_batch(&self, pairs: &[(&Instance, &Instance)]) -> Result<Vec<f64>> {
        (**self).distance_batch(pairs)
    }
    fn is_symmetric(&self) -> bool {
        (**self).is_symmetric()
    }
    fn range_hint(&self) -> Option<(f64, f64)> {
        (**self).range_hint()
    }
    fn concurrent_safe(&self) -> bool {
        (**self).concurrent_safe()
    }
    fn id(&self) -> String {
        (**self).id()
    }
}

impl<T: DistanceOracle + ?Sized> DistanceOracle for Box<T> {
    fn distance(&self, left: &Instance, right: &Instance) -> Result<f64> {
        (**self).distance(left, right)
    }
    fn distance_batch(&self, pairs: &[(&Instance, &Instance)]) -> Result<Vec<f64>> {
        (**self).distance_batch(pairs)
    }
    fn is_symmetric(&self) -> bool {
        (**self).is_symmetric()
    }
    fn range_hint(&self) -> Option<(f64, f64)> {
        (**self).range_hint()
    }
    fn concurrent_safe(&self) -> bool {
        (**self).concurrent_safe()
    }
    fn id(&self) -> String {
        (**self).id()
    }
}

pub fn pair_distance<O: DistanceOracle + ?Sized>(oracle: &O, pair: &InstancePair) -> Result<f64> {
    oracle.distance(&pair.left, &pair.right)
}

pub fn pair_distances<O: DistanceOracle + ?Sized>(
    oracle: &O,
    pairs: &[InstancePair],
) -> Result<Vec<f64>> {
    let refs: Vec<(&Instance, &Instance)> = pairs.iter().map(|p| (&p.left, &p.right)).collect();
    oracle.distance_batch(&refs)
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Oracle(format!("{what} returned non-finite distance {v}")))
    }
}

/// Memoizing wrapper with call-count telemetry.
///
/// Results are keyed by the canonical instance keys, so identical pairs
/// re-queried by the greedy search or by metrics hit the cache.
pub struct CachedOracle<O> {
    inner: O,
    cache: Mutex<HashMap<(String, String), f64>>,
    serial: Mutex<()>,
    evaluations: AtomicU64,
    queries: AtomicU64,
}

impl<O: DistanceOracle> CachedOracle<O> {
    pub fn new(inner: O) -> Self {
        CachedOracle {
            inner,
            cache: Mutex::new(HashMap::new()),
            serial: Mutex::new(()),
            evaluations: AtomicU64::new(0),
            queries: AtomicU64::new(0),
        }
    }

    /// Number of pairs actually forwarded to the wrapped oracle.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// Number of distance requests, cached or not.
    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
        self.queries.store(0, Ordering::Relaxed);
    }

    pub fn clear(&self) {
        self.cache.lock().unwrap().clear();
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    fn lookup(&self, key: &(String, String)) -> Option<f64> {
        let cache = self.cache.lock().unwrap();
        if let Some(v) = cache.get(key) {
            return Some(*v);
        }
        if self.inner.is_symmetric() {
            let rev = (key.1.clone(), key.0.clone());
            return cache.get(&rev).copied();
        }
        None
    }

    fn forward(&self, pairs: &[(&Instance, &Instance)]) -> Result<Vec<f64>> {
        let _guard = if self.inner.concurrent_safe() {
            None
        } else {
            Some(self.serial.lock().unwrap())
        };
        self.evaluations
            .fetch_add(pairs.len() as u64, Ordering::Relaxed);
        let out = self.inner.distance_batch(pairs)?;
        if out.len() != pairs.len() {
            return Err(Error::Oracle(format!(
                "oracle returned {} distances for {} pairs",
                out.len(),
                pairs.len()
            )));
        }
        out.into_iter()
            .map(|v| finite(v, &self.inner.id()))
            .collect()
    }
}

impl<O: DistanceOracle> DistanceOracle for CachedOracle<O> {
    fn distance(&self, left: &Instance, right: &Instance) -> Result<f64> {
        Ok(self.distance_batch(&[(left, right)])?[0])
    }

    fn distance_batch(&self, pairs: &[(&Instance, &Instance)]) -> Result<Vec<f64>> {
        self.queries.fetch_add(pairs.len() as u64, Ordering::Relaxed);
        let keys: Vec<(String, String)> = pairs.iter().map(|(l, r)| (l.key(), r.key())).collect();
        let mut out: Vec<Option<f64>> = keys.iter().map(|k| self.lookup(k)).collect();
        let mut missing: Vec<usize> = Vec::new();
        let mut seen: HashMap<&(String, String), usize> = HashMap::new();
        for (i, k) in keys.iter().enumerate() {
            if out[i].is_none() && !seen.contains_key(k) {
                seen.insert(k, i);
                missing.push(i);
            }
        }
        if !missing.is_empty() {
            let batch: Vec<(&Instance, &Instance)> = missing.iter().map(|&i| pairs[i]).collect();
            let values = self.forward(&batch)?;
            let mut cache = self.cache.lock().unwrap();
            for (&i, v) in missing.iter().zip(values) {
                cache.insert(keys[i].clone(), v);
                out[i] = Some(v);
            }
            for (i, k) in keys.iter().enumerate() {
                if out[i].is_none() {
                    out[i] = cache.get(k).copied();
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }

    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }

    fn range_hint(&self) -> Option<(f64, f64)> {
        self.inner.range_hint()
    }

    fn concurrent_safe(&self) -> bool {
        true
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

/// Wraps a closure.
pub struct FnOracle<F> {
    f: F,
    symmetric: bool,
    name: String,
}

impl<F> FnOracle<F>
where
    F: Fn(&Instance, &Instance) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, symmetric: bool, f: F) -> Self {
        FnOracle {
            f,
            symmetric,
            name: name.into(),
        }
    }
}

impl<F> DistanceOracle for FnOracle<F>
where
    F: Fn(&Instance, &Instance) -> f64 + Send + Sync,
{
    fn distance(&self, left: &Instance, right: &Instance) -> Result<f64> {
        finite((self.f)(left, right), &self.name)
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn id(&self) -> String {
        self.name.clone()
    }
}

/// `(x - y)^T A (x - y)` on a fixed interpretable representation.
#[derive(Clone, Debug)]
pub struct MahalanobisOracle {
    pub matrix: PsdMatrix,
    pub representation: Option<Representation>,
}

impl MahalanobisOracle {
    /// Operates on raw numeric values.
    pub fn new(matrix: PsdMatrix) -> Self {
        MahalanobisOracle {
            matrix,
            representation: None,
        }
    }

    pub fn with_representation(matrix: PsdMatrix, representation: Representation) -> Result<Self> {
        if representation.dim() != matrix.dim() {
            return Err(Error::DimensionMismatch {
                expected: representation.dim(),
                got: matrix.dim(),
            });
        }
        Ok(MahalanobisOracle {
            matrix,
            representation: Some(representation),
        })
    }

    fn encode(&self, inst: &Instance) -> Result<Vec<f64>> {
        match (&self.representation, inst) {
            (Some(rep), _) => rep.encode(inst),
            (None, Instance::Numeric(v)) => Ok(v.clone()),
            (None, other) => Err(Error::Oracle(format!(
                "mahalanobis oracle needs a representation for {:?} data",
                other.kind()
            ))),
        }
    }
}

impl DistanceOracle for MahalanobisOracle {
    fn distance(&self, left: &Instance, right: &Instance) -> Result<f64> {
        let (x, y) = (self.encode(left)?, self.encode(right)?);
        mahalanobis_distance(&x, &y, &self.matrix).map_err(|e| Error::Oracle(e.to_string()))
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn range_hint(&self) -> Option<(f64, f64)> {
        Some((0.0, f64::INFINITY))
    }

    fn id(&self) -> String {
        "mahalanobis".into()
    }
}

/// `1 - cos(phi(x), phi(y))`.
pub struct CosineEmbeddingOracle<E = EmbeddingTable> {
    pub embedding: E,
}

impl<E: Embedding> CosineEmbeddingOracle<E> {
    pub fn new(embedding: E) -> Self {
        CosineEmbeddingOracle { embedding }
    }
}

impl<E: Embedding> DistanceOracle for CosineEmbeddingOracle<E> {
    fn distance(&self, left: &Instance, right: &Instance) -> Result<f64> {
        let a = self.embedding.embed(left).map_err(|e| Error::Oracle(e.to_string()))?;
        let b = self.embedding.embed(right).map_err(|e| Error::Oracle(e.to_string()))?;
        if a.len() != b.len() {
            return Err(Error::Oracle("embedding dimensions differ".into()));
        }
        let cos = cosine_similarity(&a, &b)
            .ok_or_else(|| Error::Oracle("cosine distance of a zero embedding".into()))?;
        Ok(1.0 - cos)
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn range_hint(&self) -> Option<(f64, f64)> {
        Some((0.0, 2.0))
    }

    fn id(&self) -> String {
        "cosine-embedding".into()
    }
}

/// Precomputed pair distances keyed by instance keys.
#[derive(Clone, Debug, Default)]
pub struct TableOracle {
    table: HashMap<(String, String), f64>,
    symmetric: bool,
}

impl TableOracle {
    pub fn new(symmetric: bool) -> Self {
        TableOracle {
            table: HashMap::new(),
            symmetric,
        }
    }

    pub fn insert(&mut self, left: &Instance, right: &Instance, distance: f64) {
        self.table.insert((left.key(), right.key()), distance);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl DistanceOracle for TableOracle {
    fn distance(&self, left: &Instance, right: &Instance) -> Result<f64> {
        let key = (left.key(), right.key());
        if let Some(v) = self.table.get(&key) {
            return Ok(*v);
        }
        if self.symmetric {
            if let Some(v) = self.table.get(&(key.1.clone(), key.0.clone())) {
                return Ok(*v);
            }
        }
        Err(Error::Oracle(format!(
            "table lookup miss for pair ({:?}, {:?})",
            key.0, key.1
        )))
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn id(&self) -> String {
        "table".into()
    }
}

/// Checks declared symmetry on a sample of pairs. Returns the largest
/// observed `|d(x,y) - d(y,x)|`.
pub fn spot_check_symmetry<O: DistanceOracle + ?Sized>(
    oracle: &O,
    pairs: &[InstancePair],
    tol: f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for p in pairs {
        let a = oracle.distance(&p.left, &p.right)?;
        let b = oracle.distance(&p.right, &p.left)?;
        worst = worst.max((a - b).abs());
    }
    if oracle.is_symmetric() && worst > tol {
        return Err(Error::Oracle(format!(
            "oracle declared symmetric but asymmetry {worst} exceeds {tol}"
        )));
    }
    Ok(worst)
}
