//! Command-line front end.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::analogy::{
    greedy_select, select_analogies, AnalogyConfig, CandidatePool, DiversityIndexing, PoolTerms, Term,
};
use crate::baselines::{fit_bilinear, fit_concat_linear};
use crate::embedding::{Embedding, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::synthetic::{generate, SyntheticFamily, SyntheticOracle, SyntheticSpec};
use crate::eval::{evaluate, neighborhood_config_for, write_results_csv, write_results_svg, EvalConfig, Method};
use crate::fit::{default_max_nonzeros, fit_diag, fit_full, fit_global, ExplanationReport, FitConfig};
use crate::instance::{InstancePair, Schema};
use crate::io::{
    analogy_report_json, canonical_json, explanation_json, infer_schema, load_embeddings, load_pairs,
    load_schema, make_oracle, write_json, write_pairs_csv, OracleSpec, RunConfig, SharedOracle,
};
use crate::metric::PsdMatrix;
use crate::oracle::{pair_distances, DistanceOracle};
use crate::perturb::{build_neighborhood, default_neighborhood_size, derive_seed, DEFAULT_BIAS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "simexplain", version, about = "Explain black-box distance functions")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, env = "SIMEXPLAIN_SEED", default_value_t = 0, global = true)]
    pub seed: u64,
    /// Exit with status 4 when a fit does not converge.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit feature-based explanations for pairs.
    ExplainFeatures(FeaturesArgs),
    /// Select analogous pairs from a pool.
    ExplainAnalogies(AnalogiesArgs),
    /// Analogy selection with each objective term removed in turn.
    Ablate(AnalogiesArgs),
    /// Compare methods on a synthetic suite or a dataset.
    Evaluate(EvaluateArgs),
    /// Write a synthetic dataset and its ground-truth matrix.
    GenSynthetic(GenArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Full,
    Diag,
    Global,
    Lime,
    Jslime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Synthetic,
    File,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Pairs to explain (CSV or JSON lines).
    #[arg(long)]
    pub pair_file: PathBuf,
    /// Schema JSON; inferred from the pair file when omitted.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// mahalanobis:<file>, cosine-embedding:<file>, cmd:<program args>, table:<file>.
    #[arg(long)]
    pub oracle: String,
    /// Declare the oracle symmetric (or not).
    #[arg(long)]
    pub symmetric: Option<bool>,
    /// Allow concurrent calls to an external oracle.
    #[arg(long)]
    pub concurrent: bool,
    /// Explain only this pair (0-based).
    #[arg(long)]
    pub index: Option<usize>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Mode::Full)]
    pub mode: Mode,
    #[arg(long)]
    pub neighborhood_size: Option<usize>,
    #[arg(long)]
    pub kernel_sigma_sq: Option<f64>,
    /// Smoothing of the categorical perturbation model.
    #[arg(long, default_value_t = DEFAULT_BIAS)]
    pub bias: f64,
    #[arg(long)]
    pub l1_weight: Option<f64>,
    #[arg(long)]
    pub max_nonzeros: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct AnalogiesArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Candidate pairs.
    #[arg(long)]
    pub pool_file: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Embedding for direction similarity: `identity` or a JSON-lines file.
    #[arg(long, default_value = "identity")]
    pub phi: String,
    #[arg(long, value_enum, default_value_t = DiversityIndexing::UnorderedOnce)]
    pub diversity: DiversityIndexing,
    /// Drop one objective term.
    #[arg(long, value_enum)]
    pub ablate: Option<Term>,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long, value_enum, default_value_t = Suite::Synthetic)]
    pub suite: Suite,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = Method::ALL)]
    pub methods: Vec<Method>,
    /// `1..10`, `1-10` or `1,2,5`.
    #[arg(long, default_value = "1..10")]
    pub k_range: String,
    #[arg(long, default_value_t = 1)]
    pub folds: usize,
    #[arg(long)]
    pub neighborhood_size: Option<usize>,
    #[arg(long)]
    pub kernel_sigma_sq: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Results CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also plot `--svg-metric` against k.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long, default_value = "infidelity")]
    pub svg_metric: String,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    #[arg(long)]
    pub pair_file: Option<PathBuf>,
    #[arg(long)]
    pub pool_file: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub symmetric: Option<bool>,
}

#[derive(Args, Debug, Clone)]
pub struct SyntheticArgs {
    #[arg(long, value_enum, default_value_t = SyntheticFamily::Quadratic)]
    pub family: SyntheticFamily,
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 30)]
    pub pairs: usize,
    #[arg(long, default_value_t = 60)]
    pub pool: usize,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
}

impl SyntheticArgs {
    fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            family: self.family,
            dim: self.dim,
            pairs: self.pairs,
            pool: self.pool,
            scale: self.scale,
            spread: self.spread,
            seed,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::ExplainFeatures(a) => explain_features(a, cli.seed, cli.strict),
        Command::ExplainAnalogies(a) => explain_analogies(a, cli.seed, false),
        Command::Ablate(a) => explain_analogies(a, cli.seed, true),
        Command::Evaluate(a) => run_evaluate(a, cli.seed),
        Command::GenSynthetic(a) => gen_synthetic(a, cli.seed),
    }
}

fn emit(out: Option<&Path>, doc: &Value) -> Result<()> {
    match out {
        Some(p) => write_json(p, doc),
        None => {
            let text = canonical_json(doc)?;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn warn(msgs: &[String]) {
    for m in msgs {
        eprintln!("warning: {m}");
    }
}

struct Loaded {
    schema: Schema,
    pairs: Vec<InstancePair>,
    oracle: SharedOracle,
    spec: OracleSpec,
}

fn load_data(d: &DataArgs) -> Result<Loaded> {
    let schema = match &d.schema {
        Some(p) => load_schema(p)?,
        None => infer_schema(&d.pair_file)?,
    };
    let loaded = load_pairs(&d.pair_file, &schema)?;
    warn(&loaded.warnings);
    if loaded.pairs.is_empty() {
        return Err(Error::Empty(format!("{}: nothing to explain", d.pair_file.display())));
    }
    if let Some(i) = d.index {
        if i >= loaded.pairs.len() {
            return Err(Error::Config(format!("--index {i} but only {} pairs", loaded.pairs.len())));
        }
    }
    let mut spec: OracleSpec = d.oracle.parse()?;
    spec.symmetric = d.symmetric;
    spec.concurrent = d.concurrent;
    let oracle = make_oracle(&spec, &schema, loaded.pairs.first())?;
    Ok(Loaded {
        schema,
        pairs: loaded.pairs,
        oracle,
        spec,
    })
}

fn selected(d: &DataArgs, n: usize) -> Vec<usize> {
    match d.index {
        Some(i) => vec![i],
        None => (0..n).collect(),
    }
}

fn report_oracle_calls(o: &SharedOracle) {
    eprintln!("oracle: {} evaluations, {} queries", o.evaluations(), o.queries());
}

fn without_run(mut v: Value, index: usize) -> Value {
    if let Value::Object(o) = &mut v {
        o.remove("run");
        o.insert("index".into(), json!(index));
    }
    v
}

fn explain_features(a: &FeaturesArgs, seed: u64, strict: bool) -> Result<i32> {
    let data = load_data(&a.data)?;
    let kind = data.schema.kind();
    let defaults = FitConfig::default();
    let fit = FitConfig {
        l1_weight: a.l1_weight.unwrap_or(defaults.l1_weight),
        max_nonzeros: match a.mode {
            Mode::Diag => Some(a.max_nonzeros.unwrap_or(default_max_nonzeros(kind))),
            _ => a.max_nonzeros,
        },
        max_iters: a.max_iters.unwrap_or(defaults.max_iters),
        tol: a.tol.unwrap_or(defaults.tol),
        ..defaults
    };
    fit.validate()?;
    let size = a.neighborhood_size.unwrap_or(default_neighborhood_size(kind));
    let mut run = RunConfig::new("explain-features", seed);
    run.data = Some(a.data.pair_file.clone());
    run.oracle = Some(data.spec.clone());
    run.schema = Some(data.schema.clone());
    run.mode = Some(format!("{:?}", a.mode).to_lowercase());
    run.fit = Some(fit.clone());
    if a.mode != Mode::Global {
        run.neighborhood_size = Some(size);
        run.kernel_sigma_sq = a.kernel_sigma_sq;
    }
    let oracle: &dyn DistanceOracle = &*data.oracle;
    let mut converged = true;
    let docs: Vec<Value> = if a.mode == Mode::Global {
        let rep = crate::eval::global_representation(&data.schema, &data.pairs)?;
        let report = fit_global(&data.pairs, &rep, oracle, &fit, None)?;
        converged &= report.diagnostics.converged;
        warn(&report.diagnostics.warnings);
        let mut doc = explanation_json(&report, &run, None)?;
        if let Value::Object(o) = &mut doc {
            o.remove("run");
        }
        vec![doc]
    } else {
        let nb_cfg = neighborhood_config_for(&data.schema, &data.pairs, a.bias, a.kernel_sigma_sq)?;
        let idx = selected(&a.data, data.pairs.len());
        let one = |i: usize| -> Result<(Value, Option<ExplanationReport>)> {
            let nb = build_neighborhood(&data.pairs[i], size, &nb_cfg, derive_seed(seed, 1000 + i as u64), None)?;
            Ok(match a.mode {
                Mode::Full | Mode::Diag => {
                    let mut r = if a.mode == Mode::Full {
                        fit_full(&nb, oracle, &fit)?
                    } else {
                        fit_diag(&nb, oracle, &fit)?
                    };
                    r.seed = Some(nb.seed);
                    (without_run(explanation_json(&r, &run, None)?, i), Some(r))
                }
                Mode::Lime | Mode::Jslime => {
                    let (name, surrogate) = if a.mode == Mode::Lime {
                        ("lime", serde_json::to_value(fit_concat_linear(&nb, oracle)?)?)
                    } else {
                        ("jslime", serde_json::to_value(fit_bilinear(&nb, oracle)?)?)
                    };
                    let pair = &data.pairs[i];
                    let bb = crate::oracle::pair_distance(oracle, pair)?;
                    (
                        json!({"index": i, "method": name, "surrogate": surrogate, "pair": pair, "bb_distance": bb, "seed": nb.seed}),
                        None,
                    )
                }
                Mode::Global => unreachable!(),
            })
        };
        let results: Vec<(Value, Option<ExplanationReport>)> = if oracle.concurrent_safe() {
            idx.par_iter().map(|&i| one(i)).collect::<Result<_>>()?
        } else {
            idx.iter().map(|&i| one(i)).collect::<Result<_>>()?
        };
        results
            .into_iter()
            .map(|(doc, r)| {
                if let Some(r) = r {
                    converged &= r.diagnostics.converged;
                    warn(&r.diagnostics.warnings);
                }
                doc
            })
            .collect()
    };
    emit(a.data.out.as_deref(), &json!({"explanations": docs, "run": run}))?;
    report_oracle_calls(&data.oracle);
    if !converged {
        eprintln!("warning: at least one fit stopped at the iteration limit");
        if strict {
            return Ok(EXIT_NOT_CONVERGED);
        }
    }
    Ok(EXIT_OK)
}

fn explain_analogies(a: &AnalogiesArgs, seed: u64, all_ablations: bool) -> Result<i32> {
    let data = load_data(&a.data)?;
    let pool_loaded = load_pairs(&a.pool_file, &data.schema)?;
    warn(&pool_loaded.warnings);
    let mut cfg = AnalogyConfig::for_kind(data.schema.kind(), a.k);
    cfg.lambda1 = a.lambda1.unwrap_or(cfg.lambda1);
    cfg.lambda2 = a.lambda2.unwrap_or(cfg.lambda2);
    cfg.alpha = a.alpha.unwrap_or(cfg.alpha);
    cfg.diversity = a.diversity;
    if let Some(t) = a.ablate {
        cfg = cfg.without(t);
    }
    cfg.validate()?;
    let oracle: &dyn DistanceOracle = &*data.oracle;
    let pool = CandidatePool::new(pool_loaded.pairs, oracle)?;
    let phi: Box<dyn Embedding> = if a.phi == "identity" {
        Box::new(crate::eval::default_embedding(&data.schema, &data.pairs, &pool.pairs)?)
    } else {
        let table: EmbeddingTable = load_embeddings(Path::new(&a.phi))?;
        Box::new(table)
    };
    let mut run = RunConfig::new(if all_ablations { "ablate" } else { "explain-analogies" }, seed);
    run.data = Some(a.data.pair_file.clone());
    run.pool = Some(a.pool_file.clone());
    run.oracle = Some(data.spec.clone());
    run.schema = Some(data.schema.clone());
    run.analogy = Some(cfg.clone());
    run.mode = Some(a.phi.clone());
    let mut docs = Vec::new();
    for i in selected(&a.data, data.pairs.len()) {
        let x = &data.pairs[i];
        let doc = if all_ablations {
            let terms = PoolTerms::new(&pool, x, oracle, phi.as_ref(), &cfg, None)?;
            let mut doc = serde_json::Map::new();
            doc.insert("index".into(), json!(i));
            let full = greedy_select(&terms, &cfg)?;
            warn(&full.warnings);
            doc.insert("full".into(), serde_json::to_value(&full)?);
            for t in [Term::Fidelity, Term::Closeness, Term::Diversity] {
                let s = greedy_select(&terms, &cfg.without(t))?;
                let name = format!("without_{}", serde_json::to_value(t)?.as_str().unwrap_or("term"));
                doc.insert(name, serde_json::to_value(&s)?);
            }
            Value::Object(doc)
        } else {
            let set = select_analogies(&pool, x, oracle, phi.as_ref(), &cfg, None)?;
            warn(&set.warnings);
            without_run(analogy_report_json(&set, &run, None)?, i)
        };
        docs.push(doc);
    }
    emit(a.data.out.as_deref(), &json!({"explanations": docs, "run": run}))?;
    report_oracle_calls(&data.oracle);
    Ok(EXIT_OK)
}

/// `1..10` (inclusive), `1-10` or a comma list.
pub fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("invalid k range {s:?}"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let ks: Vec<usize> = if let Some((lo, hi)) = s.split_once("..").or_else(|| s.split_once('-')) {
        let (lo, hi) = (num(lo)?, num(hi.trim_start_matches('='))?);
        if lo > hi {
            return Err(bad());
        }
        (lo..=hi).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err(bad());
    }
    Ok(ks)
}

fn run_evaluate(a: &EvaluateArgs, seed: u64) -> Result<i32> {
    let k_range = parse_k_range(&a.k_range)?;
    let mut run = RunConfig::new("evaluate", seed);
    let (schema, pairs, pool, oracle): (Schema, Vec<InstancePair>, Option<Vec<InstancePair>>, Box<dyn DistanceOracle>) =
        match a.suite {
            Suite::Synthetic => {
                let spec = a.synthetic.spec(seed);
                let task = generate(&spec)?;
                run.synthetic = Some(spec);
                (task.schema, task.pairs, Some(task.pool), Box::new(task.oracle))
            }
            Suite::File => {
                let pair_file = a
                    .pair_file
                    .as_ref()
                    .ok_or_else(|| Error::Config("--suite file needs --pair-file".into()))?;
                let oracle = a
                    .oracle
                    .as_ref()
                    .ok_or_else(|| Error::Config("--suite file needs --oracle".into()))?;
                let schema = match &a.schema {
                    Some(p) => load_schema(p)?,
                    None => infer_schema(pair_file)?,
                };
                let loaded = load_pairs(pair_file, &schema)?;
                warn(&loaded.warnings);
                let pool = match &a.pool_file {
                    Some(p) => {
                        let l = load_pairs(p, &schema)?;
                        warn(&l.warnings);
                        Some(l.pairs)
                    }
                    None => None,
                };
                let mut spec: OracleSpec = oracle.parse()?;
                spec.symmetric = a.symmetric;
                let o = make_oracle(&spec, &schema, loaded.pairs.first())?;
                run.data = Some(pair_file.clone());
                run.pool = a.pool_file.clone();
                run.oracle = Some(spec);
                (schema, loaded.pairs, pool, Box::new(o))
            }
        };
    let mut cfg = EvalConfig::for_kind(schema.kind(), seed);
    if let Some(n) = a.neighborhood_size {
        cfg.neighborhood_size = n;
    }
    cfg.kernel_sigma_sq = a.kernel_sigma_sq;
    cfg.analogy.lambda1 = a.lambda1.unwrap_or(cfg.analogy.lambda1);
    cfg.analogy.lambda2 = a.lambda2.unwrap_or(cfg.analogy.lambda2);
    cfg.analogy.alpha = a.alpha.unwrap_or(cfg.analogy.alpha);
    cfg.k_range = k_range;
    cfg.folds = a.folds;
    run.schema = Some(schema.clone());
    run.methods = Some(a.methods.clone());
    run.evaluation = Some(cfg.clone());
    let rows = evaluate(&a.methods, &schema, &pairs, pool.as_deref(), oracle.as_ref(), &cfg)?;
    let file = std::fs::File::create(&a.out).map_err(|e| Error::io(a.out.display().to_string(), e))?;
    write_results_csv(&rows, std::io::BufWriter::new(file))?;
    write_json(&a.out.with_extension("run.json"), &run)?;
    if let Some(svg) = &a.svg {
        std::fs::write(svg, write_results_svg(&rows, &a.svg_metric)).map_err(|e| Error::io(svg.display().to_string(), e))?;
    }
    Ok(EXIT_OK)
}

fn gen_synthetic(a: &GenArgs, seed: u64) -> Result<i32> {
    let spec = a.synthetic.spec(seed);
    let task = generate(&spec)?;
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_json(&dir.join("schema.json"), &task.schema)?;
    let bb = pair_distances(&task.oracle, &task.pairs)?;
    write_pairs_csv(&dir.join("pairs.csv"), &task.schema, &task.pairs, Some(&bb))?;
    let bb_pool = pair_distances(&task.oracle, &task.pool)?;
    write_pairs_csv(&dir.join("pool.csv"), &task.schema, &task.pool, Some(&bb_pool))?;
    write_json(&dir.join("truth.json"), &task.oracle)?;
    if let SyntheticOracle::Quadratic { matrix, scale } = &task.oracle {
        // Usable directly as `mahalanobis:<dir>/oracle.json`.
        let scaled = PsdMatrix::new(matrix.matrix() * *scale)?;
        write_json(&dir.join("oracle.json"), &json!({"matrix": scaled.to_rows()}))?;
    }
    let mut run = RunConfig::new("gen-synthetic", seed);
    run.schema = Some(task.schema.clone());
    run.synthetic = Some(spec);
    write_json(&dir.join("run.json"), &run)?;
    Ok(EXIT_OK)
}
