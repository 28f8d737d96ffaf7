use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::OracleSpec;
use crate::analogy::{AnalogyConfig, AnalogySet};
use crate::error::{Error, Result};
use crate::eval::synthetic::SyntheticSpec;
use crate::eval::{EvalConfig, Method};
use crate::fit::{ExplanationReport, FitConfig};
use crate::instance::Schema;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Matrices with more rows than this are written as sparse triplets.
pub const SPARSE_THRESHOLD: usize = 200;

/// Everything needed to rerun a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighborhood_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_sigma_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analogy: Option<AnalogyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    pub version: String,
}

impl RunConfig {
    pub fn new(command: impl Into<String>, seed: u64) -> Self {
        RunConfig {
            command: command.into(),
            seed,
            data: None,
            pool: None,
            oracle: None,
            schema: None,
            mode: None,
            neighborhood_size: None,
            kernel_sigma_sq: None,
            fit: None,
            analogy: None,
            methods: None,
            evaluation: None,
            synthetic: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Rounds to `digits` significant decimal digits.
pub fn round_significant(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 || digits == 0 {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            let x = round_significant(n.as_f64().unwrap_or(f64::NAN), SIGNIFICANT_DIGITS);
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        // serde_json's default map is ordered by key.
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys and floats rounded to
/// [`SIGNIFICANT_DIGITS`], so identical runs give identical bytes.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = canonicalize(serde_json::to_value(value)?);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, canonical_json(value)?).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    if m.nrows() <= SPARSE_THRESHOLD {
        return json!(crate::metric::matrix_to_rows(m));
    }
    let mut entries = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] != 0.0 {
                entries.push(json!([i, j, m[(i, j)]]));
            }
        }
    }
    json!({"format": "sparse", "shape": [m.nrows(), m.ncols()], "entries": entries})
}

/// JSON document for a feature explanation.
pub fn explanation_json(report: &ExplanationReport, run: &RunConfig, oracle_calls: Option<(u64, u64)>) -> Result<Value> {
    let names = report.feature_names();
    let mut doc = Map::new();
    doc.insert("method".into(), json!(report.method.name()));
    doc.insert("features".into(), json!(names));
    doc.insert("representation".into(), serde_json::to_value(&report.representation)?);
    doc.insert("matrix".into(), matrix_json(report.matrix.matrix()));
    if let Some(d) = &report.diagonal {
        doc.insert("diagonal".into(), json!(d));
        doc.insert("coefficients".into(), json!(report.nonzero_coefficients()));
    }
    doc.insert(
        "ranking".into(),
        json!(report.ranking.iter().map(|&j| names[j].clone()).collect::<Vec<_>>()),
    );
    if let Some(e) = &report.explained {
        doc.insert(
            "explained".into(),
            json!({
                "pair": e.pair,
                "predicted_distance": e.predicted_distance,
                "bb_distance": e.bb_distance,
                "residual": e.residual(),
                "contributions": matrix_json(&e.contributions),
            }),
        );
    }
    doc.insert("diagnostics".into(), serde_json::to_value(&report.diagnostics)?);
    doc.insert("fit_config".into(), serde_json::to_value(&report.config)?);
    doc.insert("seed".into(), json!(report.seed));
    if let Some((evaluations, queries)) = oracle_calls {
        doc.insert("oracle_calls".into(), json!({"evaluations": evaluations, "queries": queries}));
    }
    doc.insert("run".into(), serde_json::to_value(run)?);
    Ok(Value::Object(doc))
}

/// JSON document for an analogy explanation.
pub fn analogy_report_json(set: &AnalogySet, run: &RunConfig, oracle_calls: Option<(u64, u64)>) -> Result<Value> {
    let mut doc = match serde_json::to_value(set)? {
        Value::Object(o) => o,
        _ => unreachable!("structs serialize to objects"),
    };
    doc.insert("method".into(), json!("abe"));
    if let Some((evaluations, queries)) = oracle_calls {
        doc.insert("oracle_calls".into(), json!({"evaluations": evaluations, "queries": queries}));
    }
    doc.insert("run".into(), serde_json::to_value(run)?);
    Ok(Value::Object(doc))
}
