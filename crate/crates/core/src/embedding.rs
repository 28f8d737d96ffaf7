//! Embedding functions used for direction similarity and for the
//! cosine-embedding oracle.

use std::collections::HashMap;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::repr::Representation;

pub trait Embedding: Send + Sync {
    fn embed(&self, inst: &Instance) -> Result<Vec<f64>>;
}

/// Uses the raw numeric values, or an interpretable encoding when one is
/// supplied (dummy coding, word presence over a shared vocabulary).
#[derive(Clone, Debug, Default)]
pub struct IdentityEmbedding {
    pub representation: Option<Representation>,
}

impl IdentityEmbedding {
    pub fn with_representation(rep: Representation) -> Self {
        IdentityEmbedding {
            representation: Some(rep),
        }
    }
}

impl Embedding for IdentityEmbedding {
    fn embed(&self, inst: &Instance) -> Result<Vec<f64>> {
        if let Some(rep) = &self.representation {
            return rep.encode_lenient(inst);
        }
        match inst {
            Instance::Numeric(v) => Ok(v.clone()),
            Instance::Categorical(v) => Ok(v.iter().map(|&c| c as f64).collect()),
            Instance::Tokens(_) => Err(Error::Config(
                "identity embedding of tokens needs a word-presence representation".into(),
            )),
        }
    }
}

/// Precomputed vectors keyed by [`Instance::key`].
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
    dim: usize,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    id: String,
    vector: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if self.vectors.is_empty() {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("embedding vector has non-finite entries".into()));
        }
        self.vectors.insert(id.into(), vector);
        Ok(())
    }

    /// Parses JSON lines of `{"id": ..., "vector": [...]}`.
    pub fn from_jsonl(text: &str, path: &str) -> Result<Self> {
        let mut table = EmbeddingTable::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: EmbeddingRow = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            table.insert(row.id, row.vector).map_err(|e| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                column: 1,
                message: e.to_string(),
            })?;
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }
}

impl Embedding for EmbeddingTable {
    fn embed(&self, inst: &Instance) -> Result<Vec<f64>> {
        let key = inst.key();
        self.get(&key)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::Schema(format!("no embedding for instance {key:?}")))
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_jsonl_table() {
        let t = EmbeddingTable::from_jsonl(
            "{\"id\": \"a b\", \"vector\": [1, 0]}\n\n{\"id\": \"c\", \"vector\": [0, 2]}\n",
            "emb.jsonl",
        )
        .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.embed(&Instance::from_text("b a")).unwrap(), vec![1.0, 0.0]);
        assert!(t.embed(&Instance::from_text("zzz")).is_err());
    }

    #[test]
    fn ragged_table_rejected_with_line() {
        let err = EmbeddingTable::from_jsonl(
            "{\"id\": \"a\", \"vector\": [1, 0]}\n{\"id\": \"b\", \"vector\": [1]}\n",
            "e",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn cosine_of_zero_vector_is_undefined() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), None);
        assert_eq!(cosine_similarity(&[2.0, 0.0], &[1.0, 0.0]), Some(1.0));
    }
}
