use super::*;
use crate::instance::Schema;
use crate::oracle::{FnOracle, MahalanobisOracle};
use crate::perturb::{build_neighborhood, KernelConfig, NeighborhoodConfig, NumericStats, Perturber};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn num(v: &[f64]) -> Instance {
    Instance::Numeric(v.to_vec())
}

fn gaussian_neighborhood(pair: &InstancePair, n: usize, std: f64, seed: u64) -> Neighborhood {
    let m = pair.left.len();
    let cfg = NeighborhoodConfig {
        schema: Schema::numeric(m),
        kernel: KernelConfig::default_for(InstanceKind::Numeric),
        perturber: Perturber::Gaussian(NumericStats {
            mean: vec![0.0; m],
            std: vec![std; m],
        }),
    };
    build_neighborhood(pair, n, &cfg, seed, None).unwrap()
}

fn no_l1() -> FitConfig {
    FitConfig {
        l1_weight: 0.0,
        max_iters: 20_000,
        tol: 1e-12,
        ..FitConfig::default()
    }
}

#[test]
fn defaults() {
    let cfg = FitConfig::default();
    assert_eq!(cfg.l1_weight, 1e-4);
    assert_eq!(cfg.max_iters, 2000);
    assert_eq!(default_max_nonzeros(InstanceKind::Numeric), 4);
    assert_eq!(default_max_nonzeros(InstanceKind::Categorical), 10);
    assert_eq!(default_max_nonzeros(InstanceKind::Tokens), 5);
    assert_eq!(DEFAULT_GLOBAL_FEATURE_CAP, 500);
}

#[test]
fn invalid_config_rejected() {
    let bad = FitConfig {
        l1_weight: -1.0,
        ..FitConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let bad = FitConfig {
        tol: 0.0,
        ..FitConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn zero_oracle_gives_zero_matrix() {
    let pair = InstancePair::new(num(&[0.0, 1.0, 2.0]), num(&[1.0, 1.0, 0.0])).unwrap();
    let nb = gaussian_neighborhood(&pair, 50, 1.0, 1);
    let zero = FnOracle::new("zero", true, |_: &Instance, _: &Instance| 0.0);
    let r = fit_full(&nb, &zero, &FitConfig::default()).unwrap();
    assert!(r.matrix.matrix().iter().all(|v| *v == 0.0));
    assert_eq!(r.explained.as_ref().unwrap().predicted_distance, 0.0);
}

#[test]
fn recovers_quadratic_oracle() {
    let a_star = PsdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
    let oracle = MahalanobisOracle::new(a_star.clone());
    let pair = InstancePair::new(num(&[0.5, -0.2]), num(&[1.5, 0.4])).unwrap();
    let nb = gaussian_neighborhood(&pair, 200, 1.0, 7);
    let r = fit_full(&nb, &oracle, &no_l1()).unwrap();
    assert!(r.diagnostics.weighted_mae < 1e-3, "{:?}", r.diagnostics);
    assert!((r.matrix.matrix() - a_star.matrix()).abs().max() < 1e-4);

    // Neighbouring pair is predicted within solver tolerance.
    let other = InstancePair::new(num(&[0.7, -0.1]), num(&[1.2, 0.9])).unwrap();
    let want = oracle.distance(&other.left, &other.right).unwrap();
    assert!((r.predict(&other).unwrap() - want).abs() < 1e-3);
}

#[test]
fn report_predicts_its_own_pair() {
    let oracle = FnOracle::new("l1", true, |a: &Instance, b: &Instance| {
        a.as_numeric().unwrap().iter().zip(b.as_numeric().unwrap()).map(|(x, y)| (x - y).abs()).sum()
    });
    let pair = InstancePair::new(num(&[0.0, 1.0, 2.0]), num(&[1.0, 0.0, 0.5])).unwrap();
    let nb = gaussian_neighborhood(&pair, 100, 0.5, 3);
    let r = fit_full(&nb, &oracle, &FitConfig::default()).unwrap();
    let e = r.explained.as_ref().unwrap();
    assert!((r.predict(&pair).unwrap() - e.predicted_distance).abs() < 1e-10);
    assert!((e.contributions.sum() - e.predicted_distance).abs() < 1e-10);
    let same = InstancePair::new(pair.left.clone(), pair.left.clone()).unwrap();
    assert_eq!(r.predict(&same).unwrap(), 0.0);
    assert!(crate::metric::check_psd(r.matrix.matrix()).is_ok());
    assert!(r.predict(&InstancePair::new(Instance::from_text("a"), Instance::from_text("b")).unwrap()).is_err());
}

#[test]
fn diagonal_recovery() {
    let a_star = PsdMatrix::from_diagonal(&[1.0, 2.0, 0.0, 0.0]).unwrap();
    let oracle = MahalanobisOracle::new(a_star);
    let pair = InstancePair::new(num(&[0.0, 0.0, 0.0, 0.0]), num(&[1.0, -1.0, 0.5, 0.2])).unwrap();
    let nb = gaussian_neighborhood(&pair, 500, 1.0, 5);
    let r = fit_diag(&nb, &oracle, &FitConfig::default()).unwrap();
    let a = r.diagonal.as_ref().unwrap();
    for (got, want) in a.iter().zip([1.0, 2.0, 0.0, 0.0]) {
        assert!((got - want).abs() < 1e-2, "{a:?}");
    }
    assert!(a.iter().all(|v| *v >= 0.0));
    let capped = fit_diag(
        &nb,
        &oracle,
        &FitConfig {
            max_nonzeros: Some(2),
            ..FitConfig::default()
        },
    )
    .unwrap();
    let a = capped.diagonal.unwrap();
    assert_eq!(a[2], 0.0);
    assert_eq!(a[3], 0.0);
}

#[test]
fn diagonal_fit_of_identical_pairs_is_zero() {
    let pair = InstancePair::new(num(&[1.0, 2.0]), num(&[1.0, 2.0])).unwrap();
    let nb = gaussian_neighborhood(&pair, 20, 0.0, 1);
    let oracle = FnOracle::new("c", true, |_: &Instance, _: &Instance| 0.3);
    let r = fit_diag(&nb, &oracle, &FitConfig::default()).unwrap();
    assert_eq!(r.diagonal.as_ref().unwrap(), &vec![0.0, 0.0]);
    assert_eq!(r.explained.as_ref().unwrap().predicted_distance, 0.0);
    assert!(!r.diagnostics.warnings.is_empty());

    let full = fit_full(&nb, &oracle, &FitConfig::default()).unwrap();
    assert!(full.matrix.matrix().iter().all(|v| *v == 0.0));
    assert!(!full.diagnostics.warnings.is_empty());
}

#[test]
fn diagonal_structure_matches_nnls() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..10 {
        let d = 3;
        let n = 40;
        let diffs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..2.0)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let problem = PsdProblem::new(diffs.clone(), targets.clone(), weights.clone()).unwrap();
        let cfg = FitConfig {
            structure: MatrixStructure::Diagonal,
            ..no_l1()
        };
        let out = solve(&problem, &cfg, None).unwrap();
        let a = solve_diagonal(&diffs, &targets, &weights, None).unwrap();
        let nnls_obj = problem.loss(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(a)));
        assert!(
            (out.objective - nnls_obj).abs() <= 1e-6 * nnls_obj.max(1e-12),
            "trial {trial}: {} vs {nnls_obj}",
            out.objective
        );
    }
}

#[test]
fn restarts_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = 3;
    let n = 50;
    let diffs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let problem = PsdProblem::new(diffs, targets, vec![1.0; n]).unwrap();
    let cfg = FitConfig {
        max_iters: 20_000,
        tol: 1e-12,
        ..FitConfig::default()
    };
    let objs: Vec<f64> = (0..5)
        .map(|_| {
            let l = DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0));
            solve(&problem, &cfg, Some(&(&l * l.transpose()))).unwrap().objective
        })
        .collect();
    let min = objs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = objs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((max - min) / min < 1e-6, "{objs:?}");
}

#[test]
fn global_singleton_matches_local_singleton() {
    let oracle = FnOracle::new("sq", true, |a: &Instance, b: &Instance| {
        let (x, y) = (a.as_numeric().unwrap(), b.as_numeric().unwrap());
        (x[0] - y[0]).powi(2) * 3.0 + (x[1] - y[1]).abs()
    });
    let pair = InstancePair::new(num(&[0.0, 1.0]), num(&[1.0, 3.0])).unwrap();
    let rep = Representation::for_schema(&Schema::numeric(2), crate::repr::RepKind::Identity).unwrap();
    let g = fit_global(std::slice::from_ref(&pair), &rep, &oracle, &FitConfig::default(), None).unwrap();
    let member = NeighborhoodMember {
        left: pair.left.clone(),
        right: pair.right.clone(),
        xbar: rep.encode(&pair.left).unwrap(),
        ybar: rep.encode(&pair.right).unwrap(),
        weight: 1.0,
    };
    let nb = Neighborhood::from_members(rep, vec![member], 0).unwrap();
    let l = fit_full(&nb, &oracle, &FitConfig::default()).unwrap();
    assert!((g.matrix.matrix() - l.matrix.matrix()).abs().max() < 1e-9);
    assert!(g.explained.is_none());
}

#[test]
fn global_recovery() {
    let a_star = PsdMatrix::new(DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 0.5, -0.1, 0.0, -0.1, 0.8])).unwrap();
    let oracle = MahalanobisOracle::new(a_star.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pairs: Vec<InstancePair> = (0..1000)
        .map(|_| {
            let l: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            InstancePair::new(num(&l), num(&r)).unwrap()
        })
        .collect();
    let rep = Representation::for_schema(&Schema::numeric(3), crate::repr::RepKind::Identity).unwrap();
    let r = fit_global(&pairs, &rep, &oracle, &no_l1(), None).unwrap();
    assert!(r.diagnostics.weighted_mae < 1e-3, "{:?}", r.diagnostics);
    assert!((r.matrix.matrix() - a_star.matrix()).abs().max() < 1e-3);
}

#[test]
fn global_feature_selection_hook() {
    let pairs = vec![
        InstancePair::new(Instance::from_text("a b c"), Instance::from_text("a d")).unwrap(),
        InstancePair::new(Instance::from_text("a c"), Instance::from_text("c e")).unwrap(),
    ];
    let rep = Representation::word_presence(pairs.iter().flat_map(|p| [&p.left, &p.right])).unwrap();
    let oracle = FnOracle::new("size", true, |a: &Instance, b: &Instance| (a.len() as f64 - b.len() as f64).abs());
    let sel = top_tfidf_selector(2);
    let r = fit_global(&pairs, &rep, &oracle, &FitConfig::default(), Some(&sel)).unwrap();
    assert_eq!(r.matrix.dim(), 2);
    // "a" and "c" appear in three documents each.
    assert_eq!(r.feature_names(), vec!["a".to_string(), "c".to_string()]);
    assert!(r.predict(&pairs[0]).is_ok());
}

#[test]
fn nonzero_coefficients_are_named() {
    let a_star = PsdMatrix::from_diagonal(&[0.0, 2.0, 0.0]).unwrap();
    let oracle = MahalanobisOracle::new(a_star);
    let pair = InstancePair::new(num(&[0.0, 0.0, 0.0]), num(&[1.0, 1.0, 1.0])).unwrap();
    let nb = gaussian_neighborhood(&pair, 100, 1.0, 2);
    let r = fit_diag(&nb, &oracle, &FitConfig::default()).unwrap();
    let nz = r.nonzero_coefficients();
    assert_eq!(nz.len(), 1);
    assert!((nz["f1"] - 2.0).abs() < 1e-8);
}
