use std::io::Write as _;

use super::*;
use crate::analogy::{select_analogies, AnalogyConfig, CandidatePool};
use crate::embedding::IdentityEmbedding;
use crate::eval::neighborhood_config_for;
use crate::fit::{fit_diag, FitConfig};
use crate::metric::PsdMatrix;
use crate::oracle::{pair_distance, CachedOracle, DistanceOracle, MahalanobisOracle};
use crate::perturb::build_neighborhood;

fn file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
    p
}

fn num(v: &[f64]) -> Instance {
    Instance::Numeric(v.to_vec())
}

#[test]
fn numeric_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = file(&dir, "d.csv", "x_a,x_b,y_a,y_b,bb_distance\n1,2,3,4,0.5\n0, 0 ,1,1,\n");
    let schema = Schema::Numeric {
        features: vec!["a".into(), "b".into()],
    };
    let got = load_pairs(&p, &schema).unwrap();
    assert_eq!(got.pairs[0], InstancePair::new(num(&[1.0, 2.0]), num(&[3.0, 4.0])).unwrap());
    assert_eq!(got.bb_distance, vec![Some(0.5), None]);
    assert_eq!(got.lines, vec![2, 3]);
    assert_eq!(infer_schema(&p).unwrap(), schema);

    let bad = file(&dir, "bad.csv", "x_a,x_b,y_a,y_b\n1,2,3,4\n1,2,oops,4\n");
    match load_pairs(&bad, &schema) {
        Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 3)),
        other => panic!("{other:?}"),
    }
    let missing = file(&dir, "m.csv", "x_a,y_a\n1,2\n");
    assert!(matches!(load_pairs(&missing, &schema), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn token_jsonl_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = file(
        &dir,
        "t.jsonl",
        "{\"left\": \"the cat sat\", \"right\": [\"a\", \"dog\"], \"bb_distance\": 0.25}\n\n{\"left\": \"x\", \"right\": \"x y\"}\n",
    );
    let got = load_pairs(&p, &Schema::Tokens).unwrap();
    assert_eq!(got.pairs[0].left, Instance::tokens(["cat", "sat", "the"]));
    assert_eq!(got.bb_distance, vec![Some(0.25), None]);
    assert_eq!(got.lines, vec![1, 3]);
    assert_eq!(infer_schema(&p).unwrap(), Schema::Tokens);

    let c = file(&dir, "t.csv", "left,right\nthe cat,a dog\n");
    assert_eq!(load_pairs(&c, &Schema::Tokens).unwrap().pairs[0].right, Instance::tokens(["a", "dog"]));
}

#[test]
fn out_of_range_category_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let schema = Schema::categorical(vec![2, 3]);
    let p = file(&dir, "c.jsonl", "{\"left\": [0, 1], \"right\": [1, 2]}\n{\"left\": [0, 3], \"right\": [1, 2]}\n");
    match load_pairs(&p, &schema) {
        Err(e @ Error::Parse { line: 2, .. }) => assert!(e.to_string().contains("out of range")),
        other => panic!("{other:?}"),
    }
    let c = file(&dir, "c.csv", "x_c0,x_c1,y_c0,y_c1\n0,1,1,2\n1,1,2,0\n");
    match load_pairs(&c, &schema) {
        Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 3)),
        other => panic!("{other:?}"),
    }
    let labelled = Schema::Categorical {
        features: vec!["colour".into()],
        cardinalities: vec![2],
        categories: Some(vec![vec!["red".into(), "blue".into()]]),
    };
    let l = file(&dir, "l.jsonl", "{\"left\": [\"blue\"], \"right\": [0]}\n");
    assert_eq!(load_pairs(&l, &labelled).unwrap().pairs[0].left, Instance::Categorical(vec![1]));
}

#[test]
fn empty_file_warns() {
    let dir = tempfile::tempdir().unwrap();
    let p = file(&dir, "e.jsonl", "");
    let got = load_pairs(&p, &Schema::numeric(2)).unwrap();
    assert!(got.pairs.is_empty());
    assert_eq!(got.warnings.len(), 1);
}

#[test]
fn csv_writer_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.csv");
    let schema = Schema::numeric(2);
    let pairs = vec![InstancePair::new(num(&[0.1, -2.0]), num(&[1.0 / 3.0, 5.0])).unwrap()];
    write_pairs_csv(&p, &schema, &pairs, Some(&[0.7])).unwrap();
    let got = load_pairs(&p, &schema).unwrap();
    assert_eq!(got.pairs, pairs);
    assert_eq!(got.bb_distance, vec![Some(0.7)]);
}

#[test]
fn oracle_specs_parse() {
    let s: OracleSpec = "cmd:python3 oracle.py --fast".parse().unwrap();
    assert_eq!(
        s.kind,
        OracleKind::Cmd {
            program: "python3".into(),
            args: vec!["oracle.py".into(), "--fast".into()]
        }
    );
    assert!("mahalanobis:".parse::<OracleSpec>().is_err());
    assert!("ftp:x".parse::<OracleSpec>().is_err());
}

#[test]
fn identity_mahalanobis_is_squared_euclidean() {
    let dir = tempfile::tempdir().unwrap();
    let p = file(&dir, "a.json", "[[1, 0, 0], [0, 1, 0], [0, 0, 1]]");
    let spec: OracleSpec = format!("mahalanobis:{}", p.display()).parse().unwrap();
    let o = make_oracle(&spec, &Schema::numeric(3), None).unwrap();
    let (x, y) = ([1.0, -2.0, 0.5], [0.0, 1.0, 2.5]);
    let want: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
    assert!((o.distance(&num(&x), &num(&y)).unwrap() - want).abs() < 1e-12);
    assert!(make_oracle(&spec, &Schema::numeric(2), None).is_err());
    let q = file(&dir, "b.json", "{\"matrix\": [[2, 0], [0, 0]]}");
    let spec: OracleSpec = format!("mahalanobis:{}", q.display()).parse().unwrap();
    let o = make_oracle(&spec, &Schema::numeric(2), None).unwrap();
    assert_eq!(o.distance(&num(&[1.0, 5.0]), &num(&[0.0, 0.0])).unwrap(), 2.0);
}

#[test]
fn cosine_embedding_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let p = file(
        &dir,
        "e.jsonl",
        "{\"id\": \"cat\", \"vector\": [1, 0]}\n{\"id\": \"dog\", \"vector\": [1, 1]}\n{\"id\": \"car\", \"vector\": [0, 2]}\n",
    );
    let spec: OracleSpec = format!("cosine-embedding:{}", p.display()).parse().unwrap();
    let o = make_oracle(&spec, &Schema::Tokens, None).unwrap();
    let d = |a: &str, b: &str| o.distance(&Instance::from_text(a), &Instance::from_text(b)).unwrap();
    assert!((d("cat", "dog") - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
    assert!((d("cat", "car") - 1.0).abs() < 1e-12);
    assert!(d("dog", "dog").abs() < 1e-12);
    assert!(o.distance(&Instance::from_text("cow"), &Instance::from_text("cat")).is_err());
}

#[test]
fn table_oracle_miss_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = file(&dir, "t.csv", "x_f0,y_f0,bb_distance\n1,2,0.5\n");
    let mut spec: OracleSpec = format!("table:{}", p.display()).parse().unwrap();
    let schema = Schema::numeric(1);
    let o = make_oracle(&spec, &schema, None).unwrap();
    assert_eq!(o.distance(&num(&[1.0]), &num(&[2.0])).unwrap(), 0.5);
    assert!(matches!(o.distance(&num(&[2.0]), &num(&[1.0])), Err(Error::Oracle(_))));
    spec.symmetric = Some(true);
    let o = make_oracle(&spec, &schema, None).unwrap();
    assert_eq!(o.distance(&num(&[2.0]), &num(&[1.0])).unwrap(), 0.5);
    let no_bb = file(&dir, "n.csv", "x_f0,y_f0\n1,2\n");
    assert!(make_oracle(&format!("table:{}", no_bb.display()).parse().unwrap(), &schema, None).is_err());
}

#[test]
fn significant_digit_rounding() {
    assert_eq!(round_significant(0.1 + 0.2, 12), 0.3);
    assert_eq!(round_significant(123456.7890123456, 12), 123456.789012);
    assert_eq!(round_significant(-1.0e-20 / 3.0, 3), -3.33e-21);
    assert_eq!(round_significant(0.0, 12), 0.0);
    let s = canonical_json(&serde_json::json!({"b": 1.0 / 3.0, "a": [2, 0.5]})).unwrap();
    assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
    assert!(s.contains("0.333333333333\n") || s.contains("0.333333333333,") || s.contains("0.333333333333 "));
}

fn diag_report(seed: u64) -> (crate::fit::ExplanationReport, SharedOracle) {
    let schema = Schema::Numeric {
        features: vec!["a".into(), "b".into(), "c".into()],
    };
    let inner: Box<dyn DistanceOracle> = Box::new(MahalanobisOracle::new(PsdMatrix::from_diagonal(&[2.0, 0.0, 1.0]).unwrap()));
    let oracle: SharedOracle = std::sync::Arc::new(CachedOracle::new(inner));
    let pair = InstancePair::new(num(&[0.0, 0.0, 0.0]), num(&[1.0, 1.0, 1.0])).unwrap();
    let nb_cfg = neighborhood_config_for(&schema, std::slice::from_ref(&pair), 0.0, None).unwrap();
    let nb = build_neighborhood(&pair, 300, &nb_cfg, seed, Some(&*oracle as &dyn DistanceOracle)).unwrap();
    let report = fit_diag(&nb, &*oracle, &FitConfig::default()).unwrap();
    (report, oracle)
}

#[test]
fn diagonal_report_lists_nonzero_coefficients() {
    let (report, _) = diag_report(5);
    let run = RunConfig::new("explain-features", 5);
    let doc = explanation_json(&report, &run, None).unwrap();
    let coeffs = doc["coefficients"].as_object().unwrap();
    let keys: Vec<&String> = coeffs.keys().collect();
    assert_eq!(keys, vec!["a", "c"]);
    assert!((coeffs["a"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    assert!((coeffs["c"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(doc["ranking"][0], "a");
}

#[test]
fn reports_round_trip_and_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = RunConfig::new("explain-features", 5);
    run.fit = Some(FitConfig::default());
    run.analogy = Some(AnalogyConfig::for_kind(crate::instance::InstanceKind::Numeric, 3));
    run.oracle = Some("mahalanobis:a.json".parse().unwrap());
    run.schema = Some(Schema::numeric(3));
    run.neighborhood_size = Some(300);
    run.kernel_sigma_sq = Some(1.6875);
    let p = dir.path().join("run.json");
    write_json(&p, &run).unwrap();
    assert_eq!(read_json::<RunConfig>(&p).unwrap(), run);

    let (a, _) = diag_report(5);
    let (b, _) = diag_report(5);
    let ja = canonical_json(&explanation_json(&a, &run, None).unwrap()).unwrap();
    let jb = canonical_json(&explanation_json(&b, &run, None).unwrap()).unwrap();
    assert_eq!(ja, jb);
    let back: serde_json::Value = serde_json::from_str(&ja).unwrap();
    assert_eq!(serde_json::from_value::<RunConfig>(back["run"].clone()).unwrap(), run);
}

#[test]
fn large_matrices_are_sparse() {
    let m = nalgebra::DMatrix::from_diagonal_element(SPARSE_THRESHOLD + 1, SPARSE_THRESHOLD + 1, 0.5);
    let rep = crate::repr::Representation::for_schema(&Schema::numeric(m.nrows()), crate::repr::RepKind::Identity).unwrap();
    let (small, _) = diag_report(1);
    let report = crate::fit::ExplanationReport {
        representation: rep,
        matrix: PsdMatrix::new(m).unwrap(),
        diagonal: None,
        explained: None,
        ranking: vec![],
        ..small
    };
    let doc = explanation_json(&report, &RunConfig::new("x", 0), None).unwrap();
    assert_eq!(doc["matrix"]["format"], "sparse");
    assert_eq!(doc["matrix"]["entries"].as_array().unwrap().len(), SPARSE_THRESHOLD + 1);
}

#[test]
fn greedy_oracle_calls_grow_linearly() {
    let task = crate::eval::synthetic::generate(&crate::eval::synthetic::SyntheticSpec {
        pool: 40,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let inner: Box<dyn DistanceOracle> = Box::new(task.oracle.clone());
    let oracle = CachedOracle::new(inner);
    let pool = CandidatePool::new(task.pool.clone(), &oracle).unwrap();
    let x = &task.pairs[0];
    let phi = IdentityEmbedding::default();
    for k in [1usize, 3, 6] {
        oracle.clear();
        oracle.reset_counters();
        let cfg = AnalogyConfig::for_kind(crate::instance::InstanceKind::Numeric, k);
        let set = select_analogies(&pool, x, &oracle, &phi, &cfg, None).unwrap();
        assert_eq!(set.len(), k);
        let n = task.pool.len() as u64;
        // One call for the explained pair, four per candidate/selected pair.
        let bound = 1 + 4 * n * k as u64;
        assert!(oracle.evaluations() <= bound, "k={k}: {} > {bound}", oracle.evaluations());
        let _ = pair_distance(&oracle, x).unwrap();
    }
}
