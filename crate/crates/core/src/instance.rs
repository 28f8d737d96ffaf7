//! Raw instances, pairs of instances and the schemas that validate them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Numeric,
    Categorical,
    Tokens,
}

/// A single raw input to the black box.
///
/// Token instances are stored as a sorted, de-duplicated set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum Instance {
    Numeric(Vec<f64>),
    Categorical(Vec<usize>),
    Tokens(Vec<String>),
}

impl Instance {
    pub fn tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v: Vec<String> = tokens.into_iter().map(Into::into).collect();
        v.sort();
        v.dedup();
        Instance::Tokens(v)
    }

    /// Whitespace tokenization; nothing fancier.
    pub fn from_text(text: &str) -> Self {
        Instance::tokens(text.split_whitespace())
    }

    pub fn kind(&self) -> InstanceKind {
        match self {
            Instance::Numeric(_) => InstanceKind::Numeric,
            Instance::Categorical(_) => InstanceKind::Categorical,
            Instance::Tokens(_) => InstanceKind::Tokens,
        }
    }

    /// Number of raw features (token count for token sets).
    pub fn len(&self) -> usize {
        match self {
            Instance::Numeric(v) => v.len(),
            Instance::Categorical(v) => v.len(),
            Instance::Tokens(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Canonical textual identifier. Used for memoization, embedding lookup
    /// and precomputed distance tables.
    pub fn key(&self) -> String {
        match self {
            Instance::Numeric(v) => v
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(","),
            Instance::Categorical(v) => v
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(","),
            Instance::Tokens(v) => v.join(" "),
        }
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            Instance::Numeric(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&[usize]> {
        match self {
            Instance::Categorical(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_tokens(&self) -> Option<&[String]> {
        match self {
            Instance::Tokens(v) => Some(v),
            _ => None,
        }
    }
}

/// The pair whose distance is being explained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstancePair {
    pub left: Instance,
    pub right: Instance,
}

impl InstancePair {
    /// Builds a pair, checking that both sides share kind and (for
    /// tabular kinds) dimension.
    pub fn new(left: Instance, right: Instance) -> Result<Self> {
        if left.kind() != right.kind() {
            return Err(Error::Schema(format!(
                "pair members differ in kind: {:?} vs {:?}",
                left.kind(),
                right.kind()
            )));
        }
        if left.kind() != InstanceKind::Tokens && left.len() != right.len() {
            return Err(Error::DimensionMismatch {
                expected: left.len(),
                got: right.len(),
            });
        }
        Ok(InstancePair { left, right })
    }

    pub fn kind(&self) -> InstanceKind {
        self.left.kind()
    }

    pub fn swapped(&self) -> InstancePair {
        InstancePair {
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }

    pub fn key(&self) -> (String, String) {
        (self.left.key(), self.right.key())
    }
}

/// Declared layout of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schema {
    Numeric {
        features: Vec<String>,
    },
    Categorical {
        features: Vec<String>,
        cardinalities: Vec<usize>,
        /// Optional category labels per feature, used only for naming.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        categories: Option<Vec<Vec<String>>>,
    },
    Tokens,
}

impl Schema {
    pub fn numeric(m: usize) -> Self {
        Schema::Numeric {
            features: (0..m).map(|j| format!("f{j}")).collect(),
        }
    }

    pub fn categorical(cardinalities: Vec<usize>) -> Self {
        Schema::Categorical {
            features: (0..cardinalities.len()).map(|j| format!("c{j}")).collect(),
            cardinalities,
            categories: None,
        }
    }

    pub fn kind(&self) -> InstanceKind {
        match self {
            Schema::Numeric { .. } => InstanceKind::Numeric,
            Schema::Categorical { .. } => InstanceKind::Categorical,
            Schema::Tokens => InstanceKind::Tokens,
        }
    }

    /// Number of raw features, or `None` for token data.
    pub fn num_features(&self) -> Option<usize> {
        match self {
            Schema::Numeric { features } => Some(features.len()),
            Schema::Categorical { features, .. } => Some(features.len()),
            Schema::Tokens => None,
        }
    }

    pub fn validate(&self, inst: &Instance) -> Result<()> {
        match (self, inst) {
            (Schema::Numeric { features }, Instance::Numeric(v)) => {
                if v.len() != features.len() {
                    return Err(Error::DimensionMismatch {
                        expected: features.len(),
                        got: v.len(),
                    });
                }
                if let Some(j) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Schema(format!(
                        "non-finite value in feature {}",
                        features[j]
                    )));
                }
                Ok(())
            }
            (Schema::Categorical { cardinalities, features, .. }, Instance::Categorical(v)) => {
                if v.len() != cardinalities.len() {
                    return Err(Error::DimensionMismatch {
                        expected: cardinalities.len(),
                        got: v.len(),
                    });
                }
                for (j, (&c, &card)) in v.iter().zip(cardinalities).enumerate() {
                    if c >= card {
                        return Err(Error::Schema(format!(
                            "category {c} out of range for feature {} (cardinality {card})",
                            features[j]
                        )));
                    }
                }
                Ok(())
            }
            (Schema::Tokens, Instance::Tokens(_)) => Ok(()),
            (s, i) => Err(Error::Schema(format!(
                "instance kind {:?} does not match schema kind {:?}",
                i.kind(),
                s.kind()
            ))),
        }
    }

    pub fn validate_pair(&self, pair: &InstancePair) -> Result<()> {
        self.validate(&pair.left)?;
        self.validate(&pair.right)
    }
}
