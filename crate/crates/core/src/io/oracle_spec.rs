use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{InstancePair, Schema};
use crate::metric::PsdMatrix;
use crate::oracle::{CachedOracle, CosineEmbeddingOracle, DistanceOracle, ExternalOracle, MahalanobisOracle, TableOracle};
use crate::repr::Representation;

/// Oracle handed to the explainers: memoized, with call counters.
pub type SharedOracle = Arc<CachedOracle<Box<dyn DistanceOracle>>>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum OracleKind {
    /// JSON matrix, either bare rows or `{"matrix": rows, "representation": ...}`.
    Mahalanobis { path: PathBuf },
    /// JSON lines `{"id": key, "vector": [...]}`.
    CosineEmbedding { path: PathBuf },
    /// External program speaking the line protocol.
    Cmd { program: String, args: Vec<String> },
    /// Precomputed distances: a pair file whose `bb_distance` is filled in.
    Table { path: PathBuf },
}

/// Parsed `--oracle` argument plus its declared properties.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub kind: OracleKind,
    /// Overrides the oracle's own symmetry declaration.
    pub symmetric: Option<bool>,
    /// Whether an external program may be queried concurrently.
    pub concurrent: bool,
}

impl OracleSpec {
    pub fn new(kind: OracleKind) -> Self {
        OracleSpec {
            kind,
            symmetric: None,
            concurrent: false,
        }
    }
}

impl FromStr for OracleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (scheme, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("oracle {s:?}: expected <type>:<argument>")))?;
        if rest.trim().is_empty() {
            return Err(Error::Config(format!("oracle {s:?}: missing argument")));
        }
        let kind = match scheme {
            "mahalanobis" => OracleKind::Mahalanobis { path: rest.into() },
            "cosine-embedding" => OracleKind::CosineEmbedding { path: rest.into() },
            "table" => OracleKind::Table { path: rest.into() },
            "cmd" => {
                let mut words = rest.split_whitespace().map(str::to_string);
                let program = words.next().expect("non-empty");
                OracleKind::Cmd {
                    program,
                    args: words.collect(),
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown oracle type {other:?} (mahalanobis, cosine-embedding, cmd, table)"
                )))
            }
        };
        Ok(OracleSpec::new(kind))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixFile {
    Rows(Vec<Vec<f64>>),
    WithRepresentation {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        representation: Option<Representation>,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Declared symmetry wins over the wrapped oracle's own.
struct Declared {
    inner: Box<dyn DistanceOracle>,
    symmetric: bool,
}

impl DistanceOracle for Declared {
    fn distance(&self, l: &crate::instance::Instance, r: &crate::instance::Instance) -> Result<f64> {
        self.inner.distance(l, r)
    }
    fn distance_batch(&self, pairs: &[(&crate::instance::Instance, &crate::instance::Instance)]) -> Result<Vec<f64>> {
        self.inner.distance_batch(pairs)
    }
    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
    fn range_hint(&self) -> Option<(f64, f64)> {
        self.inner.range_hint()
    }
    fn concurrent_safe(&self) -> bool {
        self.inner.concurrent_safe()
    }
    fn id(&self) -> String {
        self.inner.id()
    }
}

/// Builds the oracle described by `spec`. External programs are probed with
/// `probe` on start-up, so one is required for `cmd:` oracles.
pub fn make_oracle(spec: &OracleSpec, schema: &Schema, probe: Option<&InstancePair>) -> Result<SharedOracle> {
    let inner: Box<dyn DistanceOracle> = match &spec.kind {
        OracleKind::Mahalanobis { path } => {
            let file: MatrixFile = serde_json::from_str(&read(path)?)
                .map_err(|e| super::parse_err(path, e.line(), e.column(), e.to_string()))?;
            let (rows, rep) = match file {
                MatrixFile::Rows(r) => (r, None),
                MatrixFile::WithRepresentation { matrix, representation } => (matrix, representation),
            };
            let matrix = PsdMatrix::try_from(rows)?;
            let rep = match (rep, schema) {
                (Some(r), _) => Some(r),
                (None, Schema::Numeric { .. }) => None,
                (None, s) => Some(Representation::for_schema(s, crate::repr::RepKind::default_for(s.kind()))?),
            };
            Box::new(match rep {
                Some(r) => MahalanobisOracle::with_representation(matrix, r)?,
                None => {
                    if let Some(m) = schema.num_features() {
                        if m != matrix.dim() {
                            return Err(Error::DimensionMismatch {
                                expected: m,
                                got: matrix.dim(),
                            });
                        }
                    }
                    MahalanobisOracle::new(matrix)
                }
            })
        }
        OracleKind::CosineEmbedding { path } => Box::new(CosineEmbeddingOracle::new(super::load_embeddings(path)?)),
        OracleKind::Table { path } => {
            let loaded = super::load_pairs(path, schema)?;
            let mut table = TableOracle::new(spec.symmetric.unwrap_or(false));
            for ((p, d), line) in loaded.pairs.iter().zip(&loaded.bb_distance).zip(&loaded.lines) {
                let d = d.ok_or_else(|| super::parse_err(path, *line, 0, "table oracle rows need bb_distance"))?;
                table.insert(&p.left, &p.right, d);
            }
            Box::new(table)
        }
        OracleKind::Cmd { program, args } => {
            let probe = probe.ok_or_else(|| Error::Config("an external oracle needs a probe pair".into()))?;
            Box::new(
                ExternalOracle::spawn(program, args, probe)?
                    .with_symmetry(spec.symmetric.unwrap_or(false))
                    .with_concurrency(spec.concurrent),
            )
        }
    };
    let inner: Box<dyn DistanceOracle> = match spec.symmetric {
        Some(s) if s != inner.is_symmetric() => Box::new(Declared { inner, symmetric: s }),
        _ => inner,
    };
    Ok(Arc::new(CachedOracle::new(inner)))
}
