//! Interpretable representations: identity for numeric data, dummy coding
//! for categorical data, binary word presence for token sets.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, InstanceKind, Schema};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepKind {
    Identity,
    DummyCoded,
    WordPresence,
}

impl RepKind {
    pub fn default_for(kind: InstanceKind) -> RepKind {
        match kind {
            InstanceKind::Numeric => RepKind::Identity,
            InstanceKind::Categorical => RepKind::DummyCoded,
            InstanceKind::Tokens => RepKind::WordPresence,
        }
    }

    pub fn compatible_with(self, kind: InstanceKind) -> bool {
        RepKind::default_for(kind) == self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpretableVector {
    pub values: Vec<f64>,
    pub rep_kind: RepKind,
    pub feature_names: Arc<[String]>,
}

impl InterpretableVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// A fitted mapping from raw instances to interpretable vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rep_kind", rename_all = "snake_case")]
pub enum Representation {
    Identity {
        feature_names: Arc<[String]>,
    },
    DummyCoded {
        cardinalities: Vec<usize>,
        feature_names: Arc<[String]>,
    },
    WordPresence {
        vocabulary: Arc<[String]>,
    },
}

impl Representation {
    /// Representation for tabular schemas. Token schemas need a vocabulary,
    /// see [`Representation::word_presence`].
    pub fn for_schema(schema: &Schema, rep_kind: RepKind) -> Result<Self> {
        match (schema, rep_kind) {
            (Schema::Numeric { features }, RepKind::Identity) => Ok(Representation::Identity {
                feature_names: features.clone().into(),
            }),
            (
                Schema::Categorical {
                    features,
                    cardinalities,
                    categories,
                },
                RepKind::DummyCoded,
            ) => {
                let mut names = Vec::with_capacity(cardinalities.iter().sum());
                for (j, (&card, feat)) in cardinalities.iter().zip(features).enumerate() {
                    for c in 0..card {
                        let label = categories
                            .as_ref()
                            .and_then(|cats| cats.get(j))
                            .and_then(|cs| cs.get(c))
                            .cloned()
                            .unwrap_or_else(|| c.to_string());
                        names.push(format!("{feat}={label}"));
                    }
                }
                Ok(Representation::DummyCoded {
                    cardinalities: cardinalities.clone(),
                    feature_names: names.into(),
                })
            }
            (Schema::Tokens, RepKind::WordPresence) => Err(Error::Schema(
                "word presence needs a vocabulary; use Representation::word_presence".into(),
            )),
            (s, r) => Err(Error::Schema(format!(
                "representation {r:?} incompatible with {:?} data",
                s.kind()
            ))),
        }
    }

    /// Vocabulary from the union of tokens over `instances`, alphabetical.
    pub fn word_presence<'a, I>(instances: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Instance>,
    {
        let mut vocab = BTreeSet::new();
        for inst in instances {
            match inst {
                Instance::Tokens(t) => vocab.extend(t.iter().cloned()),
                other => {
                    return Err(Error::Schema(format!(
                        "word presence requires token instances, got {:?}",
                        other.kind()
                    )))
                }
            }
        }
        Ok(Representation::WordPresence {
            vocabulary: vocab.into_iter().collect::<Vec<_>>().into(),
        })
    }

    pub fn rep_kind(&self) -> RepKind {
        match self {
            Representation::Identity { .. } => RepKind::Identity,
            Representation::DummyCoded { .. } => RepKind::DummyCoded,
            Representation::WordPresence { .. } => RepKind::WordPresence,
        }
    }

    pub fn dim(&self) -> usize {
        self.feature_names().len()
    }

    pub fn feature_names(&self) -> &Arc<[String]> {
        match self {
            Representation::Identity { feature_names } => feature_names,
            Representation::DummyCoded { feature_names, .. } => feature_names,
            Representation::WordPresence { vocabulary } => vocabulary,
        }
    }

    /// Strict encoding: every token must be in the vocabulary and every
    /// category within its cardinality.
    pub fn encode(&self, inst: &Instance) -> Result<Vec<f64>> {
        self.encode_impl(inst, true)
    }

    /// Like [`encode`](Self::encode), but out-of-vocabulary tokens are
    /// silently dropped. Used when a local explanation is transferred to a
    /// neighbouring pair.
    pub fn encode_lenient(&self, inst: &Instance) -> Result<Vec<f64>> {
        self.encode_impl(inst, false)
    }

    fn encode_impl(&self, inst: &Instance, strict: bool) -> Result<Vec<f64>> {
        match (self, inst) {
            (Representation::Identity { feature_names }, Instance::Numeric(v)) => {
                if v.len() != feature_names.len() {
                    return Err(Error::DimensionMismatch {
                        expected: feature_names.len(),
                        got: v.len(),
                    });
                }
                Ok(v.clone())
            }
            (
                Representation::DummyCoded {
                    cardinalities,
                    feature_names,
                },
                Instance::Categorical(v),
            ) => {
                if v.len() != cardinalities.len() {
                    return Err(Error::DimensionMismatch {
                        expected: cardinalities.len(),
                        got: v.len(),
                    });
                }
                let mut out = vec![0.0; feature_names.len()];
                let mut offset = 0;
                for (j, (&c, &card)) in v.iter().zip(cardinalities).enumerate() {
                    if c >= card {
                        return Err(Error::Schema(format!(
                            "category {c} out of range for feature {j} (cardinality {card})"
                        )));
                    }
                    out[offset + c] = 1.0;
                    offset += card;
                }
                Ok(out)
            }
            (Representation::WordPresence { vocabulary }, Instance::Tokens(t)) => {
                let mut out = vec![0.0; vocabulary.len()];
                for tok in t {
                    match vocabulary.binary_search(tok) {
                        Ok(i) => out[i] = 1.0,
                        Err(_) if strict => {
                            return Err(Error::Schema(format!(
                                "token {tok:?} not in vocabulary"
                            )))
                        }
                        Err(_) => {}
                    }
                }
                Ok(out)
            }
            (r, i) => Err(Error::Schema(format!(
                "representation {:?} incompatible with {:?} instance",
                r.rep_kind(),
                i.kind()
            ))),
        }
    }

    pub fn to_interpretable(&self, inst: &Instance) -> Result<InterpretableVector> {
        Ok(InterpretableVector {
            values: self.encode(inst)?,
            rep_kind: self.rep_kind(),
            feature_names: self.feature_names().clone(),
        })
    }
}

/// Maps one instance into the requested interpretable representation.
///
/// For word presence the vocabulary is the instance's own tokens; callers
/// explaining a pair should build the representation over the whole pair
/// (or neighbourhood) with [`Representation::word_presence`].
pub fn to_interpretable(
    inst: &Instance,
    rep_kind: RepKind,
    schema: &Schema,
) -> Result<InterpretableVector> {
    if !rep_kind.compatible_with(inst.kind()) {
        return Err(Error::Schema(format!(
            "representation {rep_kind:?} incompatible with {:?} instance",
            inst.kind()
        )));
    }
    schema.validate(inst)?;
    let rep = match rep_kind {
        RepKind::WordPresence => Representation::word_presence(std::iter::once(inst))?,
        _ => Representation::for_schema(schema, rep_kind)?,
    };
    rep.to_interpretable(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_identity() {
        let s = Schema::numeric(2);
        let v = to_interpretable(&Instance::Numeric(vec![1.5, -2.0]), RepKind::Identity, &s).unwrap();
        assert_eq!(v.values, vec![1.5, -2.0]);
        assert_eq!(&*v.feature_names, ["f0", "f1"]);
    }

    #[test]
    fn dummy_coding_single_feature() {
        let s = Schema::categorical(vec![3]);
        let v = to_interpretable(&Instance::Categorical(vec![1]), RepKind::DummyCoded, &s).unwrap();
        assert_eq!(v.values, vec![0.0, 1.0, 0.0]);
        assert_eq!(&*v.feature_names, ["c0=0", "c0=1", "c0=2"]);
    }

    #[test]
    fn dummy_coding_blocks_concatenate() {
        let rep = Representation::for_schema(&Schema::categorical(vec![2, 3]), RepKind::DummyCoded).unwrap();
        assert_eq!(
            rep.encode(&Instance::Categorical(vec![1, 2])).unwrap(),
            vec![0.0, 1.0, 0.0, 0.0, 1.0]
        );
        assert!(rep.encode(&Instance::Categorical(vec![2, 0])).is_err());
    }

    #[test]
    fn word_presence_over_vocabulary() {
        let a = Instance::tokens(["a", "c"]);
        let b = Instance::tokens(["b"]);
        let rep = Representation::word_presence([&a, &b]).unwrap();
        assert_eq!(rep.encode(&a).unwrap(), vec![1.0, 0.0, 1.0]);
        assert!(rep.encode(&Instance::tokens(["z"])).is_err());
        assert_eq!(rep.encode_lenient(&Instance::tokens(["a", "z"])).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn incompatible_kind_is_schema_error() {
        let s = Schema::numeric(1);
        let r = to_interpretable(&Instance::Numeric(vec![1.0]), RepKind::DummyCoded, &s);
        assert!(matches!(r, Err(Error::Schema(_))));
    }
}
