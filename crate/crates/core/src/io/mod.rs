//! Dataset ingestion, oracle construction and report persistence.

mod oracle_spec;
mod report;

use std::path::Path;

use serde_json::Value;

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::instance::{Instance, InstanceKind, InstancePair, Schema};

pub use oracle_spec::{make_oracle, MatrixFile, OracleKind, OracleSpec, SharedOracle};
pub use report::{
    analogy_report_json, canonical_json, explanation_json, read_json, round_significant, write_json,
    RunConfig, SIGNIFICANT_DIGITS, SPARSE_THRESHOLD,
};

/// Pairs read from a dataset file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadedPairs {
    pub pairs: Vec<InstancePair>,
    /// Black-box distances supplied with the data, per pair.
    pub bb_distance: Vec<Option<f64>>,
    /// 1-based source line of each pair.
    pub lines: Vec<usize>,
    pub warnings: Vec<String>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_err(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        column,
        message: message.into(),
    }
}

pub fn load_schema(path: &Path) -> Result<Schema> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.column(), e.to_string()))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::from_jsonl(&read_text(path)?, &path.display().to_string())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads pairs from CSV (`x_<feature>...`, `y_<feature>...` columns, or
/// `left`/`right` text columns for token data, plus an optional
/// `bb_distance`) or JSON lines (`{"left": ..., "right": ...,
/// "bb_distance": ...}`). Every pair is validated against `schema`.
pub fn load_pairs(path: &Path, schema: &Schema) -> Result<LoadedPairs> {
    let text = read_text(path)?;
    let mut out = if is_csv(path) {
        parse_csv(&text, path, schema)?
    } else {
        parse_jsonl(&text, path, schema)?
    };
    if out.pairs.is_empty() {
        out.warnings.push(format!("{}: no pairs", path.display()));
    }
    Ok(out)
}

/// Guesses a schema from a data file: numeric CSV columns or token JSON
/// lines. Categorical data needs an explicit schema.
pub fn infer_schema(path: &Path) -> Result<Schema> {
    let text = read_text(path)?;
    if is_csv(path) {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| parse_err(path, 1, 0, e.to_string()))?;
        if headers.iter().any(|h| h == "left") {
            return Ok(Schema::Tokens);
        }
        let features: Vec<String> = headers
            .iter()
            .filter_map(|h| h.strip_prefix("x_").map(str::to_string))
            .collect();
        if features.is_empty() {
            return Err(parse_err(path, 1, 1, "no x_<feature> columns"));
        }
        return Ok(Schema::Numeric { features });
    }
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| parse_err(path, n + 1, e.column(), e.to_string()))?;
        return match &v["left"] {
            Value::String(_) => Ok(Schema::Tokens),
            Value::Array(a) if a.iter().all(Value::is_string) => Ok(Schema::Tokens),
            Value::Array(a) => Ok(Schema::numeric(a.len())),
            _ => Err(parse_err(path, n + 1, 1, "cannot infer the schema from \"left\"")),
        };
    }
    Err(Error::Empty(format!("{}: no records to infer a schema from", path.display())))
}

fn category_index(schema: &Schema, j: usize, cell: &str) -> Option<usize> {
    if let Ok(i) = cell.parse::<usize>() {
        return Some(i);
    }
    match schema {
        Schema::Categorical {
            categories: Some(c), ..
        } => c.get(j)?.iter().position(|l| l == cell),
        _ => None,
    }
}

fn parse_csv(text: &str, path: &Path, schema: &Schema) -> Result<LoadedPairs> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, 0, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let bb_col = col("bb_distance");
    let (left_cols, right_cols) = match schema {
        Schema::Tokens => {
            let l = col("left").ok_or_else(|| parse_err(path, 1, 1, "missing column \"left\""))?;
            let r = col("right").ok_or_else(|| parse_err(path, 1, 1, "missing column \"right\""))?;
            (vec![l], vec![r])
        }
        Schema::Numeric { features } | Schema::Categorical { features, .. } => {
            let find = |prefix: &str| -> Result<Vec<usize>> {
                features
                    .iter()
                    .map(|f| {
                        let name = format!("{prefix}_{f}");
                        col(&name).ok_or_else(|| parse_err(path, 1, 1, format!("missing column {name:?}")))
                    })
                    .collect()
            };
            (find("x")?, find("y")?)
        }
    };
    let mut out = LoadedPairs::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, 0, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let build = |cols: &[usize]| -> Result<Instance> {
            match schema {
                Schema::Tokens => Ok(Instance::from_text(cell(cols[0]))),
                Schema::Numeric { .. } => cols
                    .iter()
                    .map(|&c| {
                        cell(c)
                            .parse::<f64>()
                            .map_err(|e| parse_err(path, line, c + 1, format!("{:?}: {e}", cell(c))))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Instance::Numeric),
                Schema::Categorical { .. } => cols
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| {
                        category_index(schema, j, cell(c))
                            .ok_or_else(|| parse_err(path, line, c + 1, format!("unknown category {:?}", cell(c))))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Instance::Categorical),
            }
        };
        let left = build(&left_cols)?;
        let right = build(&right_cols)?;
        let pair = InstancePair::new(left, right).map_err(|e| parse_err(path, line, 0, e.to_string()))?;
        validate_located(schema, &pair, path, line, |j, right| {
            let cols = if right { &right_cols } else { &left_cols };
            cols.get(j).map_or(0, |c| c + 1)
        })?;
        let bb = match bb_col {
            Some(c) if !cell(c).is_empty() => Some(
                cell(c)
                    .parse::<f64>()
                    .map_err(|e| parse_err(path, line, c + 1, format!("bb_distance: {e}")))?,
            ),
            _ => None,
        };
        out.pairs.push(pair);
        out.bb_distance.push(bb);
        out.lines.push(line);
    }
    Ok(out)
}

/// Validates a pair, reporting the offending feature's column.
fn validate_located(
    schema: &Schema,
    pair: &InstancePair,
    path: &Path,
    line: usize,
    column_of: impl Fn(usize, bool) -> usize,
) -> Result<()> {
    for (inst, right) in [(&pair.left, false), (&pair.right, true)] {
        if let Err(e) = schema.validate(inst) {
            let j = match (schema, inst) {
                (Schema::Categorical { cardinalities, .. }, Instance::Categorical(v)) => {
                    v.iter().zip(cardinalities).position(|(c, k)| c >= k)
                }
                (_, Instance::Numeric(v)) => v.iter().position(|x| !x.is_finite()),
                _ => None,
            };
            let column = j.map_or(0, |j| column_of(j, right));
            return Err(parse_err(path, line, column, e.to_string()));
        }
    }
    Ok(())
}

fn json_instance(v: &Value, schema: &Schema) -> std::result::Result<Instance, String> {
    match (schema.kind(), v) {
        (InstanceKind::Tokens, Value::String(s)) => Ok(Instance::from_text(s)),
        (InstanceKind::Tokens, Value::Array(a)) => a
            .iter()
            .map(|t| t.as_str().map(str::to_string).ok_or_else(|| format!("token {t} is not a string")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Instance::tokens),
        (InstanceKind::Numeric, Value::Array(a)) => a
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| format!("{x} is not a number")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Instance::Numeric),
        (InstanceKind::Categorical, Value::Array(a)) => a
            .iter()
            .enumerate()
            .map(|(j, x)| match x {
                Value::Number(n) => n.as_u64().map(|n| n as usize).ok_or_else(|| format!("{x} is not a category index")),
                Value::String(s) => category_index(schema, j, s).ok_or_else(|| format!("unknown category {s:?}")),
                _ => Err(format!("{x} is not a category")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Instance::Categorical),
        (k, v) => Err(format!("{v} is not a {k:?} instance")),
    }
}

/// Byte column (1-based) of a top-level key in a JSON line.
fn key_column(line: &str, key: &str) -> usize {
    line.find(&format!("\"{key}\"")).map_or(1, |c| c + 1)
}

fn parse_jsonl(text: &str, path: &Path, schema: &Schema) -> Result<LoadedPairs> {
    let mut out = LoadedPairs::default();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| parse_err(path, lineno, e.column(), e.to_string()))?;
        let side = |key: &str| -> Result<Instance> {
            let raw = v
                .get(key)
                .ok_or_else(|| parse_err(path, lineno, 1, format!("missing field {key:?}")))?;
            json_instance(raw, schema).map_err(|m| parse_err(path, lineno, key_column(line, key), m))
        };
        let pair = InstancePair::new(side("left")?, side("right")?)
            .map_err(|e| parse_err(path, lineno, 1, e.to_string()))?;
        validate_located(schema, &pair, path, lineno, |_, right| {
            key_column(line, if right { "right" } else { "left" })
        })?;
        let bb = match v.get("bb_distance") {
            None | Some(Value::Null) => None,
            Some(x) => Some(x.as_f64().ok_or_else(|| {
                parse_err(path, lineno, key_column(line, "bb_distance"), "bb_distance is not a number")
            })?),
        };
        out.pairs.push(pair);
        out.bb_distance.push(bb);
        out.lines.push(lineno);
    }
    Ok(out)
}

/// Writes pairs as CSV with `x_`/`y_` columns (or `left`/`right` for
/// tokens) and an optional `bb_distance` column.
pub fn write_pairs_csv(path: &Path, schema: &Schema, pairs: &[InstancePair], bb: Option<&[f64]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut header: Vec<String> = match schema {
        Schema::Tokens => vec!["left".into(), "right".into()],
        Schema::Numeric { features } | Schema::Categorical { features, .. } => features
            .iter()
            .map(|f| format!("x_{f}"))
            .chain(features.iter().map(|f| format!("y_{f}")))
            .collect(),
    };
    if bb.is_some() {
        header.push("bb_distance".into());
    }
    let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for (i, p) in pairs.iter().enumerate() {
        let mut rec: Vec<String> = match (&p.left, &p.right) {
            (Instance::Tokens(a), Instance::Tokens(b)) => vec![a.join(" "), b.join(" ")],
            (Instance::Numeric(a), Instance::Numeric(b)) => a.iter().chain(b).map(|v| format!("{v:?}")).collect(),
            (Instance::Categorical(a), Instance::Categorical(b)) => a.iter().chain(b).map(|v| v.to_string()).collect(),
            _ => return Err(Error::Schema("mixed pair".into())),
        };
        if let Some(bb) = bb {
            rec.push(format!("{:?}", bb[i]));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests;
