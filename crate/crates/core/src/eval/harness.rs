use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fold_indices, mae, pearson, MetricResult, NeighborRule, Surrogates};
use crate::analogy::{dirsim_select, greedy_select, AnalogyConfig, AnalogyTerms, CandidatePool, PoolTerms};
use crate::baselines::{fit_bilinear, fit_concat_linear};
use crate::embedding::{Embedding, IdentityEmbedding};
use crate::error::{Error, Result};
use crate::fit::{fit_diag, fit_full, fit_global, FitConfig, PairSurrogate};
use crate::instance::{Instance, InstanceKind, InstancePair, Schema};
use crate::oracle::{pair_distances, DistanceOracle};
use crate::perturb::{CategoricalPerturber, DEFAULT_EPOCHS, DEFAULT_RIDGE};
use crate::perturb::{
    build_neighborhood, derive_seed, KernelConfig, NeighborhoodConfig, NumericStats, Perturber,
};
use crate::repr::{RepKind, Representation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fbfull,
    Fbdiag,
    Gfbfull,
    Lime,
    Jslime,
    Abe,
    Dirsim,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Fbfull,
        Method::Fbdiag,
        Method::Gfbfull,
        Method::Lime,
        Method::Jslime,
        Method::Abe,
        Method::Dirsim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fbfull => "fbfull",
            Method::Fbdiag => "fbdiag",
            Method::Gfbfull => "gfbfull",
            Method::Lime => "lime",
            Method::Jslime => "jslime",
            Method::Abe => "abe",
            Method::Dirsim => "dirsim",
        }
    }

    pub fn is_analogy(self) -> bool {
        matches!(self, Method::Abe | Method::Dirsim)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub neighborhood_size: usize,
    pub kernel_sigma_sq: Option<f64>,
    pub bias: f64,
    pub fit: FitConfig,
    /// Analogy weights; `k` is taken from `k_range`.
    pub analogy: AnalogyConfig,
    pub k_range: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
}

impl EvalConfig {
    pub fn for_kind(kind: InstanceKind, seed: u64) -> Self {
        EvalConfig {
            neighborhood_size: crate::perturb::default_neighborhood_size(kind),
            kernel_sigma_sq: None,
            bias: crate::perturb::DEFAULT_BIAS,
            fit: FitConfig::default(),
            analogy: AnalogyConfig::for_kind(kind, 1),
            k_range: (1..=10).collect(),
            folds: 1,
            seed,
        }
    }
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub metric: String,
    pub k: Option<usize>,
    /// `None` for the mean over folds.
    pub fold: Option<usize>,
    pub value: f64,
}

/// Perturbation setup estimated from the data being explained.
pub fn neighborhood_config_for(
    schema: &Schema,
    data: &[InstancePair],
    bias: f64,
    sigma_sq: Option<f64>,
) -> Result<NeighborhoodConfig> {
    let mut kernel = KernelConfig::default_for(schema.kind());
    kernel.sigma_sq = sigma_sq;
    let perturber = match schema {
        Schema::Numeric { .. } => {
            let rows: Vec<&[f64]> = data
                .iter()
                .flat_map(|p| [&p.left, &p.right])
                .filter_map(Instance::as_numeric)
                .collect();
            Perturber::Gaussian(NumericStats::from_rows(rows)?)
        }
        Schema::Categorical { cardinalities, .. } => {
            let rows: Vec<Vec<usize>> = data
                .iter()
                .flat_map(|p| [&p.left, &p.right])
                .filter_map(|i| i.as_categorical().map(<[usize]>::to_vec))
                .collect();
            Perturber::Conditional(CategoricalPerturber::train(
                &rows,
                cardinalities,
                bias,
                DEFAULT_RIDGE,
                DEFAULT_EPOCHS,
            )?)
        }
        Schema::Tokens => Perturber::TokenDropout,
    };
    Ok(NeighborhoodConfig {
        schema: schema.clone(),
        kernel,
        perturber,
    })
}

fn map_pairs<T, F>(oracle: &dyn DistanceOracle, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if oracle.concurrent_safe() {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Fits one feature-based explanation per pair (or one global explanation
/// trained on `train`). Neighbourhood seeds derive from `seed` and the
/// pair's position.
pub fn explain_pairs(
    method: Method,
    pairs: &[InstancePair],
    train: &[InstancePair],
    oracle: &dyn DistanceOracle,
    nb_cfg: &NeighborhoodConfig,
    cfg: &EvalConfig,
) -> Result<Surrogates> {
    if method == Method::Gfbfull {
        let rep = global_representation(&nb_cfg.schema, train)?;
        let report = fit_global(train, &rep, oracle, &cfg.fit, None)?;
        return Ok(Surrogates::Global(Arc::new(report)));
    }
    if method.is_analogy() {
        return Err(Error::UnsupportedMetric(format!(
            "{} is not a feature-based explanation",
            method.name()
        )));
    }
    let fits = map_pairs(oracle, pairs.len(), |i| -> Result<Arc<dyn PairSurrogate>> {
        let nb = build_neighborhood(&pairs[i], cfg.neighborhood_size, nb_cfg, derive_seed(cfg.seed, 1000 + i as u64), None)?;
        Ok(match method {
            Method::Fbfull => Arc::new(fit_full(&nb, oracle, &cfg.fit)?),
            Method::Fbdiag => {
                let fit = FitConfig {
                    max_nonzeros: cfg.fit.max_nonzeros.or(Some(crate::fit::default_max_nonzeros(nb_cfg.schema.kind()))),
                    ..cfg.fit.clone()
                };
                Arc::new(fit_diag(&nb, oracle, &fit)?)
            }
            Method::Lime => Arc::new(fit_concat_linear(&nb, oracle)?),
            Method::Jslime => Arc::new(fit_bilinear(&nb, oracle)?),
            _ => unreachable!(),
        })
    })?;
    Ok(Surrogates::Local(fits))
}

pub(crate) fn global_representation(schema: &Schema, pairs: &[InstancePair]) -> Result<Representation> {
    match schema {
        Schema::Tokens => Representation::word_presence(pairs.iter().flat_map(|p| [&p.left, &p.right])),
        s => Representation::for_schema(s, RepKind::default_for(s.kind())),
    }
}

/// Identity embedding over a representation shared by the pool and the
/// explained pairs.
pub(crate) fn default_embedding(schema: &Schema, pairs: &[InstancePair], pool: &[InstancePair]) -> Result<IdentityEmbedding> {
    Ok(match schema {
        Schema::Numeric { .. } => IdentityEmbedding::default(),
        s => {
            let all: Vec<InstancePair> = pairs.iter().chain(pool).cloned().collect();
            IdentityEmbedding::with_representation(global_representation(s, &all)?)
        }
    })
}

/// Terms with one candidate withheld (the explained pair itself when the
/// pool is the evaluation set).
struct Withheld<'a> {
    inner: &'a dyn AnalogyTerms,
    skip: Option<usize>,
}

impl AnalogyTerms for Withheld<'_> {
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn eligible(&self, i: usize) -> bool {
        Some(i) != self.skip && self.inner.eligible(i)
    }
    fn fidelity(&self, i: usize) -> f64 {
        self.inner.fidelity(i)
    }
    fn closeness(&self, i: usize) -> f64 {
        self.inner.closeness(i)
    }
    fn delta_min(&self, i: usize, j: usize) -> Result<f64> {
        self.inner.delta_min(i, j)
    }
    fn bb_distance(&self, i: usize) -> Option<f64> {
        self.inner.bb_distance(i)
    }
}

/// Analogy predictions `[pair][k - 1]` for `k = 1..=k_max`, from prefixes
/// of one greedy (or direction-similarity) run per pair.
#[allow(clippy::too_many_arguments)]
fn analogy_predictions(
    method: Method,
    pairs: &[InstancePair],
    truths: &[f64],
    pool: &CandidatePool,
    self_index: &[Option<usize>],
    oracle: &dyn DistanceOracle,
    phi: &dyn Embedding,
    cfg: &AnalogyConfig,
    k_max: usize,
) -> Result<Vec<Vec<f64>>> {
    let run_cfg = AnalogyConfig {
        k: k_max,
        ..cfg.clone()
    };
    let dir_cfg = AnalogyConfig {
        alpha: 0.0,
        ..run_cfg.clone()
    };
    map_pairs(oracle, pairs.len(), |i| {
        let c = if method == Method::Dirsim { &dir_cfg } else { &run_cfg };
        let terms = PoolTerms::with_target(pool, &pairs[i], truths[i], oracle, phi, c, None)?;
        let view = Withheld {
            inner: &terms,
            skip: self_index[i],
        };
        let set = match method {
            Method::Abe => greedy_select(&view, c)?,
            Method::Dirsim => dirsim_select(&view, k_max)?,
            m => return Err(Error::Config(format!("{} is not an analogy method", m.name()))),
        };
        let mut sum = 0.0;
        Ok(set
            .entries
            .iter()
            .enumerate()
            .map(|(pos, e)| {
                sum += pool.bb[e.index];
                sum / (pos + 1) as f64
            })
            .collect())
    })
}

fn check_k_range(k_range: &[usize], available: usize) -> Result<usize> {
    let k_max = k_range.iter().copied().max().ok_or_else(|| Error::Config("empty k range".into()))?;
    if k_range.contains(&0) || k_max > available {
        return Err(Error::Config(format!(
            "k range must lie in 1..={available}, got {k_range:?}"
        )));
    }
    Ok(k_max)
}

/// Infidelity and Pearson curves of an analogy method over `k_range`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_k(
    method: Method,
    pairs: &[InstancePair],
    pool: &CandidatePool,
    oracle: &dyn DistanceOracle,
    phi: &dyn Embedding,
    cfg: &AnalogyConfig,
    k_range: &[usize],
) -> Result<Vec<ResultRow>> {
    let truths = pair_distances(oracle, pairs)?;
    let k_max = check_k_range(k_range, pool.len())?;
    let none = vec![None; pairs.len()];
    let preds = analogy_predictions(method, pairs, &truths, pool, &none, oracle, phi, cfg, k_max)?;
    let all: Vec<usize> = (0..pairs.len()).collect();
    analogy_rows(method, &preds, &truths, &[all], k_range)
}

fn analogy_rows(
    method: Method,
    preds: &[Vec<f64>],
    truths: &[f64],
    folds: &[Vec<usize>],
    k_range: &[usize],
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &k in k_range {
        let mut per_metric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for fold in folds {
            let p: Vec<f64> = fold.iter().map(|&i| preds[i][k - 1]).collect();
            let t: Vec<f64> = fold.iter().map(|&i| truths[i]).collect();
            per_metric.entry("infidelity").or_default().push(mae(&p, &t)?);
            per_metric.entry("pearson").or_default().push(pearson(&p, &t).unwrap_or(f64::NAN));
        }
        push_metric_rows(&mut rows, method, Some(k), per_metric, folds.len())?;
    }
    Ok(rows)
}

fn push_metric_rows(
    rows: &mut Vec<ResultRow>,
    method: Method,
    k: Option<usize>,
    per_metric: BTreeMap<&str, Vec<f64>>,
    n_folds: usize,
) -> Result<()> {
    for (metric, values) in per_metric {
        if n_folds > 1 {
            for (f, v) in values.iter().enumerate() {
                rows.push(ResultRow {
                    method: method.name().into(),
                    metric: metric.into(),
                    k,
                    fold: Some(f),
                    value: *v,
                });
            }
        }
        let r = MetricResult::from_folds(metric, values)?;
        rows.push(ResultRow {
            method: method.name().into(),
            metric: metric.into(),
            k,
            fold: None,
            value: r.value,
        });
        if n_folds > 1 {
            rows.push(ResultRow {
                method: method.name().into(),
                metric: format!("{metric}_sem"),
                k,
                fold: None,
                value: r.sem,
            });
        }
    }
    Ok(())
}

/// Runs every method on `pairs` and returns the results table.
///
/// Feature methods report infidelity, generalized infidelity and their
/// Pearson counterparts; analogy methods report infidelity and Pearson per
/// `k`. Without a `pool` the evaluation pairs serve as candidates, each
/// pair withheld from its own selection. With `cfg.folds > 1` metrics are
/// computed per fold (the global fit trains on the other folds) and
/// summarized as mean and standard error.
pub fn evaluate(
    methods: &[Method],
    schema: &Schema,
    pairs: &[InstancePair],
    pool: Option<&[InstancePair]>,
    oracle: &dyn DistanceOracle,
    cfg: &EvalConfig,
) -> Result<Vec<ResultRow>> {
    if pairs.is_empty() {
        return Err(Error::Empty("no pairs to evaluate".into()));
    }
    for p in pairs {
        schema.validate_pair(p)?;
    }
    let truths = pair_distances(oracle, pairs)?;
    let folds = if cfg.folds > 1 {
        fold_indices(pairs.len(), cfg.folds, derive_seed(cfg.seed, 7))?
    } else {
        vec![(0..pairs.len()).collect()]
    };
    let mut rows = Vec::new();
    let nb_cfg = if methods.iter().any(|m| !m.is_analogy()) {
        Some(neighborhood_config_for(schema, pairs, cfg.bias, cfg.kernel_sigma_sq)?)
    } else {
        None
    };
    for &method in methods {
        if method.is_analogy() {
            let (pool_pairs, self_index): (Vec<InstancePair>, Vec<Option<usize>>) = match pool {
                Some(p) => (p.to_vec(), vec![None; pairs.len()]),
                None => (pairs.to_vec(), (0..pairs.len()).map(Some).collect()),
            };
            let available = pool_pairs.len() - usize::from(pool.is_none());
            let k_max = check_k_range(&cfg.k_range, available)?;
            let cand = CandidatePool::new(pool_pairs, oracle)?;
            let phi = default_embedding(schema, pairs, &cand.pairs)?;
            let preds = analogy_predictions(method, pairs, &truths, &cand, &self_index, oracle, &phi, &cfg.analogy, k_max)?;
            rows.extend(analogy_rows(method, &preds, &truths, &folds, &cfg.k_range)?);
            continue;
        }
        let nb_cfg = nb_cfg.as_ref().expect("built for feature methods");
        let local = if method == Method::Gfbfull {
            None
        } else {
            Some(explain_pairs(method, pairs, pairs, oracle, nb_cfg, cfg)?)
        };
        let mut per_metric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (f, fold) in folds.iter().enumerate() {
            let fold_pairs: Vec<InstancePair> = fold.iter().map(|&i| pairs[i].clone()).collect();
            let fold_truths: Vec<f64> = fold.iter().map(|&i| truths[i]).collect();
            let surr = match &local {
                Some(Surrogates::Local(all)) => Surrogates::Local(fold.iter().map(|&i| all[i].clone()).collect()),
                Some(g) => g.clone(),
                None => {
                    let train: Vec<InstancePair> = if folds.len() > 1 {
                        folds
                            .iter()
                            .enumerate()
                            .filter(|(g, _)| *g != f)
                            .flat_map(|(_, idx)| idx.iter().map(|&i| pairs[i].clone()))
                            .collect()
                    } else {
                        pairs.to_vec()
                    };
                    explain_pairs(method, &fold_pairs, &train, oracle, nb_cfg, cfg)?
                }
            };
            let preds = super::predictions(&surr, &fold_pairs)?;
            per_metric.entry("infidelity").or_default().push(mae(&preds, &fold_truths)?);
            per_metric.entry("pearson").or_default().push(pearson(&preds, &fold_truths).unwrap_or(f64::NAN));
            if fold_pairs.len() >= 2 {
                let rule = NeighborRule::for_pairs(schema, &fold_pairs)?;
                let g = super::generalized_predictions(&surr, &fold_pairs, &rule)?;
                per_metric.entry("generalized_infidelity").or_default().push(mae(&g, &fold_truths)?);
                per_metric
                    .entry("generalized_pearson")
                    .or_default()
                    .push(pearson(&g, &fold_truths).unwrap_or(f64::NAN));
            }
        }
        push_metric_rows(&mut rows, method, None, per_metric, folds.len())?;
    }
    Ok(rows)
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("writing results: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("results", e))?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize()
        .map(|row| {
            row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                Error::Parse {
                    path: "results".into(),
                    line,
                    column: 0,
                    message: e.to_string(),
                }
            })
        })
        .collect()
}

/// Line chart of `metric` against `k`, one polyline per method.
pub fn write_results_svg(rows: &[ResultRow], metric: &str) -> String {
    let mut series: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        if let (Some(k), None, true) = (r.k, r.fold, r.metric == metric) {
            if r.value.is_finite() {
                series.entry(&r.method).or_default().push((k, r.value));
            }
        }
    }
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let kmax = series.values().flatten().map(|p| p.0).max().unwrap_or(1).max(2) as f64;
    let kmin = series.values().flatten().map(|p| p.0).min().unwrap_or(1) as f64;
    let vmax = series.values().flatten().map(|p| p.1).fold(f64::MIN_POSITIVE, f64::max);
    let sx = |k: f64| pad + (k - kmin) / (kmax - kmin).max(1.0) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - v / vmax * (h - 2.0 * pad);
    let colors = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="12">{metric} vs k (max {vmax:.4})</text>"#
    );
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    for (n, (method, pts)) in series.iter().enumerate() {
        let c = colors[n % colors.len()];
        let d: Vec<String> = pts.iter().map(|(k, v)| format!("{:.2},{:.2}", sx(*k as f64), sy(*v))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}"/>"#, d.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{c}">{method}</text>"#,
            w - pad - 60.0,
            pad + 14.0 * n as f64
        );
    }
    s.push_str("</svg>\n");
    s
}
