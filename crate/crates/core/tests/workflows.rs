//! End-to-end workflows over the bundled benchmark fixtures.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use multifid::analysis::{budget_correlation, lpi, performance_heatmap, shared_accuracy_matrix, CorrelationMode};
use multifid::configspace::{ConfigurationSpace, Value};
use multifid::ensemble::{greedy_select, topk_filter, Metric, PredictionStore};
use multifid::executor::{load_replay, LookupMode, ReplayBundle, ReplayObjective};
use multifid::optimizer::{
    budget_ladder, incumbent, Limits, Optimizer, Origin, HISTORY_FILE, META_FILE, PREDICTIONS_DIR, SPACE_FILE,
    TRAJECTORY_FILE,
};
use multifid::portfolio::{portfolio_size_curve, read_matrix_csv, relative_regret, Portfolio, RegretKind};

const MINI: [&str; 5] = ["adult", "christine", "fabert", "jasmine", "vehicle"];

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn bundles() -> Vec<ReplayBundle> {
    MINI.iter()
        .map(|n| load_replay(fixtures().join("mini_lcbench").join(format!("{n}.json"))).unwrap())
        .collect()
}

fn replay_optimizer(name: &str, iterations: u64, seed: u64) -> Optimizer {
    let bundle = Arc::new(load_replay(fixtures().join("mini_lcbench").join(format!("{name}.json"))).unwrap());
    let objective = Arc::new(ReplayObjective::new(bundle.clone(), LookupMode::Strict));
    Optimizer::new(
        bundle.space.clone(),
        objective,
        budget_ladder(12, 50, 2.0).unwrap(),
        Limits::iterations(iterations, seed),
    )
}

#[test]
fn mini_benchmark_loads() {
    for b in bundles() {
        assert_eq!(b.configs().len(), 200);
        assert_eq!(b.b_max, 50);
        assert_eq!(b.space.dim(), 7);
        let r = b.record(0, 0);
        assert_eq!(r.val_curve.len(), 50);
        assert!(r.adaptive_val_loss(12).is_some() && r.adaptive_val_loss(25).is_some());
    }
}

#[test]
fn run_directory_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let mut opt = replay_optimizer("fabert", 4, 3);
    opt.portfolio = Portfolio::load(&fixtures().join("portfolio.json"))
        .unwrap()
        .configurations();
    opt.run_dir = Some(tmp.path().to_path_buf());
    let outcome = opt.run().unwrap();
    for f in [SPACE_FILE, META_FILE, HISTORY_FILE, TRAJECTORY_FILE, PREDICTIONS_DIR] {
        assert!(tmp.path().join(f).exists(), "{f} missing");
    }
    let records = outcome.history.records();
    assert!(records[..16].iter().all(|r| r.origin == Origin::Portfolio));
    assert!(records[16..]
        .iter()
        .all(|r| r.origin != Origin::Portfolio || r.rung > 0));
    let trajectory = std::fs::read_to_string(tmp.path().join(TRAJECTORY_FILE)).unwrap();
    let losses: Vec<f64> = trajectory
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(!losses.is_empty());
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));
    let stored = PredictionStore::load(&tmp.path().join(PREDICTIONS_DIR)).unwrap();
    assert_eq!(stored.len(), records.len());
}

#[test]
fn ensemble_beats_single_incumbent() {
    let outcome = replay_optimizer("adult", 9, 1).run().unwrap();
    let store = outcome.predictions.unwrap();
    let (best, best_loss) = incumbent(&outcome.history, 50).unwrap();
    let job = outcome
        .history
        .records()
        .iter()
        .find(|r| r.budget == 50 && r.configuration == best && r.loss == best_loss)
        .unwrap()
        .job_id;
    let incumbent_entry = store.find(&format!("job{job:06}")).unwrap();
    let single = incumbent_entry.predictions.score(&store.true_labels, Metric::Accuracy);
    let selection = greedy_select(&topk_filter(&store, 30).unwrap(), 50, Metric::Accuracy).unwrap();
    assert!(1.0 - selection.ensemble.score <= 1.0 - single);
}

#[test]
fn bundled_portfolio_curve_improves() {
    let text = std::fs::read_to_string(fixtures().join("matrix.csv")).unwrap();
    let (datasets, labels, scores) = read_matrix_csv(&text).unwrap();
    assert_eq!(labels.len(), scores.len());
    assert!(datasets.len() >= 2);
    let curve = portfolio_size_curve(&relative_regret(&scores, RegretKind::Relative), 10).unwrap();
    assert!(curve[9].1 < curve[0].1);
    let p = Portfolio::load(&fixtures().join("portfolio.json")).unwrap();
    assert_eq!(p.entries.len(), 16);
    assert!(p.entries.iter().enumerate().all(|(i, e)| e.rank == i));
}

#[test]
fn heatmap_over_fixture() {
    let bundles = bundles();
    let refs: Vec<&ReplayBundle> = bundles.iter().collect();
    let (configs, datasets, scores) = shared_accuracy_matrix(&refs, 50).unwrap();
    assert_eq!((configs.len(), datasets.len()), (200, 5));
    let labels: Vec<String> = (0..configs.len()).map(|i| format!("c{i}")).collect();
    let h = performance_heatmap(&labels, &datasets, &scores);
    assert!((1..=5).contains(&h.unique_best));
    for j in 0..5 {
        let min = h.regret.values.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        assert_eq!(min, 0.0);
    }
    let means: Vec<f64> = h.accuracy.values.iter().map(|r| r.iter().sum::<f64>()).collect();
    assert!(means.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn correlation_modes_on_fixture() {
    let bundles = bundles();
    let refs: Vec<&ReplayBundle> = bundles.iter().collect();
    for mode in [
        CorrelationMode::NonAdaptive,
        CorrelationMode::Adaptive,
        CorrelationMode::Cross,
    ] {
        let r = budget_correlation(&refs, 12, 50, mode).unwrap();
        assert_eq!(r.per_dataset.len(), 5);
        assert!(r.mean > 0.5 && r.mean <= 1.0, "{mode:?}: {}", r.mean);
        assert_eq!(r.csv_rows().len(), 5);
    }
}

#[test]
fn inactive_children_score_zero() {
    let space = ConfigurationSpace::from_path(fixtures().join("space2.json")).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(4);
    let incumbent = std::iter::repeat_with(|| space.sample_uniform(&mut rng))
        .find(|c| c.get("network type") == Some(&Value::Str("ResNet".into())))
        .unwrap();
    let batch = space.index_of("batch size").unwrap();
    let mlp_layers = space.index_of("num layers (MLP)").unwrap();
    // depends on an active and an inactive coordinate
    let f = |u: &[f64]| u[batch].powi(2) + u[mlp_layers];
    let r = lpi(&f, &space, &incumbent, 21, None).unwrap();
    assert_eq!(r.scores[mlp_layers], 0.0);
    assert!((r.scores[batch] - 1.0).abs() < 1e-12);
    assert!((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}
