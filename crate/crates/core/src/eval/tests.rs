use super::*;
use crate::analogy::{AnalogyConfig, AnalogyEntry, DiversityIndexing};
use crate::embedding::IdentityEmbedding;
use crate::instance::Instance;
use crate::oracle::FnOracle;

/// Predicts `c * |x - y|` for one-dimensional numeric pairs.
struct Scaled(f64);

impl PairSurrogate for Scaled {
    fn predict_pair(&self, p: &InstancePair) -> Result<f64> {
        Ok(self.0 * (p.left.as_numeric().unwrap()[0] - p.right.as_numeric().unwrap()[0]).abs())
    }
}

fn pair1(a: f64, b: f64) -> InstancePair {
    InstancePair::new(Instance::Numeric(vec![a]), Instance::Numeric(vec![b])).unwrap()
}

fn fixture() -> (Vec<InstancePair>, Surrogates, Vec<f64>) {
    let pairs = vec![pair1(0.0, 1.0), pair1(0.1, 1.1), pair1(5.0, 5.0)];
    let surr = Surrogates::Local(vec![Arc::new(Scaled(1.0)), Arc::new(Scaled(2.0)), Arc::new(Scaled(3.0))]);
    (pairs, surr, vec![0.9, 1.5, 0.2])
}

#[test]
fn infidelity_by_hand() {
    assert!((mae(&[0.1, 0.2], &[0.2, 0.4]).unwrap() - 0.15).abs() < 1e-15);
    let (pairs, surr, t) = fixture();
    // Own predictions 1, 2, 0.
    let r = infidelity(&surr, &pairs, &t).unwrap();
    assert!((r.value - (0.1 + 0.5 + 0.2) / 3.0).abs() < 1e-12);
    assert_eq!(r.sem, 0.0);
}

#[test]
fn generalized_infidelity_by_hand() {
    let (pairs, surr, t) = fixture();
    let rule = NeighborRule::for_pairs(&Schema::numeric(1), &pairs).unwrap();
    // Pairs 0 and 1 are each other's neighbours; pair 2 is closest to pair
    // 1 (Manhattan offsets 4.9 + 3.9 against 5 + 4).
    assert_eq!(rule.neighbors(&pairs).unwrap(), vec![1, 0, 1]);
    // Transferred predictions: 2 * 1, 1 * 1, 2 * 0.
    let r = generalized_infidelity(&surr, &pairs, &t, &rule).unwrap();
    assert!((r.value - (1.1 + 0.5 + 0.2) / 3.0).abs() < 1e-12);
}

#[test]
fn pearson_by_hand() {
    let (pairs, surr, t) = fixture();
    let r = pearson_fidelity(&surr, &pairs, &t).unwrap();
    assert!((r.value - 3.9 / 15.24f64.sqrt()).abs() < 1e-12);
    let a = [0.3, 1.0, 2.0, 2.5];
    assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    assert!((pearson(&neg, &a).unwrap() + 1.0).abs() < 1e-15);
    let aff: Vec<f64> = a.iter().map(|v| 3.0 * v - 7.0).collect();
    assert!((pearson(&aff, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Numerical(_))));
}

#[test]
fn identical_pairs_are_mutual_neighbours() {
    let pairs = vec![pair1(0.0, 1.0), pair1(0.0, 1.0)];
    let surr = Surrogates::Local(vec![Arc::new(Scaled(1.0)), Arc::new(Scaled(4.0))]);
    let t = vec![2.0, 2.0];
    let rule = NeighborRule::for_pairs(&Schema::numeric(1), &pairs).unwrap();
    assert_eq!(rule.neighbors(&pairs).unwrap(), vec![1, 0]);
    let r = generalized_infidelity(&surr, &pairs, &t, &rule).unwrap();
    assert!((r.value - (2.0 + 1.0) / 2.0).abs() < 1e-15);
}

#[test]
fn explainer_against_itself_is_exact() {
    let pairs = vec![pair1(0.0, 1.0), pair1(2.0, 0.5), pair1(1.0, 1.5)];
    let surr = Surrogates::Global(Arc::new(Scaled(1.5)));
    let t = predictions(&surr, &pairs).unwrap();
    assert_eq!(infidelity(&surr, &pairs, &t).unwrap().value, 0.0);
    // Order of the evaluation set does not matter.
    let rev: Vec<InstancePair> = pairs.iter().rev().cloned().collect();
    let trev: Vec<f64> = t.iter().rev().cloned().collect();
    let shifted: Vec<f64> = t.iter().map(|v| v + 0.3).collect();
    let shifted_rev: Vec<f64> = trev.iter().map(|v| v + 0.3).collect();
    assert!(
        (infidelity(&surr, &pairs, &shifted).unwrap().value - infidelity(&surr, &rev, &shifted_rev).unwrap().value).abs()
            < 1e-15
    );
}

#[test]
fn analogy_sets_do_not_transfer() {
    let pairs = vec![pair1(0.0, 1.0), pair1(2.0, 0.5)];
    let surr = Surrogates::Local(vec![Arc::new(AnalogyPrediction(0.5)), Arc::new(AnalogyPrediction(1.0))]);
    let rule = NeighborRule::for_pairs(&Schema::numeric(1), &pairs).unwrap();
    assert!(matches!(
        generalized_infidelity(&surr, &pairs, &[0.0, 0.0], &rule),
        Err(Error::UnsupportedMetric(_))
    ));
    assert!(infidelity(&surr, &pairs, &[0.0, 0.0]).is_ok());
}

#[test]
fn empty_inputs_are_errors() {
    let surr = Surrogates::Local(vec![]);
    assert!(matches!(infidelity(&surr, &[], &[]), Err(Error::Empty(_))));
    let rule = NeighborRule::for_pairs(&Schema::numeric(1), &[pair1(0.0, 1.0)]).unwrap();
    assert!(rule.neighbors(&[pair1(0.0, 1.0)]).is_err());
}

fn set_of(bb: &[f64]) -> AnalogySet {
    AnalogySet {
        entries: bb
            .iter()
            .enumerate()
            .map(|(i, d)| AnalogyEntry {
                index: i,
                pair: None,
                bb_distance: Some(*d),
                fidelity: 0.0,
                closeness: 0.0,
                diversity: 0.0,
                marginal: 0.0,
            })
            .collect(),
        objective: 0.0,
        config: AnalogyConfig {
            fidelity_weight: 1.0,
            lambda1: 1.0,
            lambda2: 0.01,
            alpha: 0.0,
            k: bb.len(),
            diversity: DiversityIndexing::UnorderedOnce,
        },
        warnings: vec![],
    }
}

#[test]
fn analogy_prediction_is_the_mean() {
    assert_eq!(analogy_prediction(&set_of(&[0.7]), None).unwrap(), 0.7);
    assert!((analogy_prediction(&set_of(&[0.2, 0.4, 0.6]), None).unwrap() - 0.4).abs() < 1e-15);
    assert!(analogy_prediction(&set_of(&[]), None).is_err());
    let mut s = set_of(&[0.0]);
    s.entries[0].bb_distance = None;
    s.entries[0].pair = Some(pair1(0.0, 2.0));
    let o = FnOracle::new("abs", true, |a: &Instance, b: &Instance| {
        (a.as_numeric().unwrap()[0] - b.as_numeric().unwrap()[0]).abs()
    });
    assert_eq!(analogy_prediction(&s, Some(&o)).unwrap(), 2.0);
}

#[test]
fn folds_partition_and_sem() {
    let f = fold_indices(23, 5, 3).unwrap();
    let mut all: Vec<usize> = f.iter().flatten().copied().collect();
    all.sort();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
    assert!(f.iter().all(|x| x.len() == 4 || x.len() == 5));
    assert_eq!(f, fold_indices(23, 5, 3).unwrap());
    assert!(fold_indices(3, 4, 0).is_err());
    let r = MetricResult::from_folds("m", vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(r.value, 2.5);
    // Sample std sqrt(5/3), four folds.
    assert!((r.sem - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
}

#[test]
fn results_csv_round_trips() {
    let rows = vec![
        ResultRow {
            method: "abe".into(),
            metric: "infidelity".into(),
            k: Some(3),
            fold: None,
            value: 0.1 + 0.2,
        },
        ResultRow {
            method: "fbfull".into(),
            metric: "pearson".into(),
            k: None,
            fold: Some(2),
            value: -1.0 / 3.0,
        },
    ];
    let mut buf = Vec::new();
    write_results_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("method,metric,k,fold,value\n"));
    assert_eq!(read_results_csv(buf.as_slice()).unwrap(), rows);
    let svg = write_results_svg(&rows, "infidelity");
    assert!(svg.contains("<polyline") && svg.ends_with("</svg>\n"));
}

#[test]
fn sweep_k_one_matches_single_analogy() {
    let task = synthetic::generate(&synthetic::SyntheticSpec {
        pairs: 6,
        pool: 12,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let pool = crate::analogy::CandidatePool::new(task.pool.clone(), &task.oracle).unwrap();
    let cfg = AnalogyConfig::for_kind(crate::instance::InstanceKind::Numeric, 1);
    let phi = IdentityEmbedding::default();
    let rows = sweep_k(Method::Abe, &task.pairs, &pool, &task.oracle, &phi, &cfg, &[1, 2, 3]).unwrap();
    let k1 = rows.iter().find(|r| r.k == Some(1) && r.metric == "infidelity").unwrap().value;
    let mut errs = 0.0;
    for p in &task.pairs {
        let set = crate::analogy::select_analogies(&pool, p, &task.oracle, &phi, &cfg, None).unwrap();
        let t = crate::oracle::pair_distance(&task.oracle, p).unwrap();
        errs += (analogy_prediction(&set, None).unwrap() - t).abs();
    }
    assert!((k1 - errs / task.pairs.len() as f64).abs() < 1e-12);
    assert!(sweep_k(Method::Abe, &task.pairs, &pool, &task.oracle, &phi, &cfg, &[13]).is_err());
}

#[test]
fn evaluate_runs_every_method() {
    let task = synthetic::generate(&synthetic::SyntheticSpec {
        pairs: 8,
        pool: 12,
        dim: 3,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = EvalConfig::for_kind(crate::instance::InstanceKind::Numeric, 1);
    cfg.neighborhood_size = 40;
    cfg.k_range = vec![1, 2];
    cfg.folds = 2;
    let rows = evaluate(&Method::ALL, &task.schema, &task.pairs, Some(&task.pool), &task.oracle, &cfg).unwrap();
    for m in Method::ALL {
        assert!(rows.iter().any(|r| r.method == m.name() && r.metric == "infidelity" && r.fold.is_none()));
    }
    assert!(rows.iter().any(|r| r.metric == "infidelity_sem"));
    assert_eq!(rows, evaluate(&Method::ALL, &task.schema, &task.pairs, Some(&task.pool), &task.oracle, &cfg).unwrap());
    // Pool drawn from the evaluation set itself.
    let own = evaluate(&[Method::Abe], &task.schema, &task.pairs, None, &task.oracle, &cfg).unwrap();
    assert!(own.iter().all(|r| r.value.is_finite() || r.metric.contains("pearson")));
}

#[test]
fn methods_parse() {
    assert_eq!("FbFull".parse::<Method>().unwrap(), Method::Fbfull);
    assert!("nope".parse::<Method>().is_err());
}
