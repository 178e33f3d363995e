//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

use multifid::analysis::{
    average_ranks, budget_correlation, fanova_first_order, fit_forest, lpi, spearman, CorrelationMode, ForestSettings,
};
use multifid::configspace::{ConfigurationSpace, Domain, HyperparameterSpec, Value};
use multifid::ensemble::{greedy_select, Metric, PredictionEntry, PredictionMatrix, PredictionStore};
use multifid::executor::{
    load_replay, Executor, Job, JobStatus, LookupMode, ReplayBundle, ReplayObjective, SleepObjective, SyntheticCurve,
};
use multifid::optimizer::{
    bracket_plan, budget_ladder, incumbent, promote, random_search, BudgetLadder, Limits, Optimizer, RunHistory,
    RungEntry, HISTORY_FILE,
};
use multifid::portfolio::{greedy_build, portfolio_size_curve, relative_regret, Portfolio, RegretKind};
use multifid::shaped_arch::{funnel_widths, FunnelShape};

type Outcome = Result<String, String>;
type Surface = fn(&[f64]) -> f64;
type Criterion = (&'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ladder() -> BudgetLadder {
    budget_ladder(12, 50, 2.0).expect("reference ladder")
}

fn budget_ladder_rungs() -> Outcome {
    let l = ladder();
    ensure(l.rungs == vec![12, 25, 50], || format!("rungs {:?}", l.rungs))?;
    Ok(format!("{:?}", l.rungs))
}

fn funnel_widths_reference() -> Outcome {
    let w = funnel_widths(FunnelShape::new(100, 4, 10).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(w == vec![100, 70, 40, 10], || format!("widths {w:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let n_out = rng.gen_range(1..=512u64);
        let n_max = rng.gen_range(n_out..=1024);
        let layers = rng.gen_range(1..=12u64);
        let w = funnel_widths(FunnelShape::new(n_max, layers, n_out).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure(w.len() == layers as usize && w[0] == n_max, || {
            format!("start of {w:?}")
        })?;
        if layers >= 2 {
            ensure(*w.last().unwrap() == n_out, || format!("end of {w:?}"))?;
        }
        ensure(w.windows(2).all(|p| p[1] <= p[0]), || format!("not monotone: {w:?}"))?;
    }
    Ok(format!("{w:?}; 10000 random shapes"))
}

fn schedule() -> Outcome {
    let l = ladder();
    let sizes: Vec<Vec<usize>> = (0..=2)
        .rev()
        .map(|s| bracket_plan(&l, s).map(|b| b.rung_sizes))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure(sizes == vec![vec![4, 2, 1], vec![3, 1], vec![3]], || {
        format!("{sizes:?}")
    })?;

    // promotion against a sort-based oracle on rungs with heavy ties
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1_000 {
        let n = rng.gen_range(1..40);
        let eta = [2.0, 3.0, 4.0][rng.gen_range(0..3)];
        let entries: Vec<RungEntry> = (0..n)
            .map(|i| RungEntry {
                config_id: 100 + i as u64,
                loss: rng.gen_range(0..5) as f64 / 4.0,
                crashed: rng.gen_bool(0.1),
            })
            .collect();
        let keep = promote(&entries, eta).map_err(|e| e.to_string())?;
        let expected_count = ((n as f64 / eta).floor() as usize).max(1);
        let mut ranked: Vec<(bool, f64, usize)> = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.crashed, e.loss, i))
            .collect();
        ranked.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle: Vec<u64> = ranked[..expected_count]
            .iter()
            .map(|t| entries[t.2].config_id)
            .collect();
        ensure(keep == oracle, || format!("promote {keep:?} vs oracle {oracle:?}"))?;
    }

    // every evaluation above the first rung follows one at the rung below
    for run in 0..100u64 {
        let objective = Arc::new(SyntheticCurve::wells(0.01));
        let space = Arc::new(objective.configuration_space().clone());
        let limits = Limits::iterations(1 + run % 4, run);
        let outcome = Optimizer::new(space, objective, l.clone(), limits)
            .run()
            .map_err(|e| e.to_string())?;
        let records = outcome.history.records();
        for r in records.iter().filter(|r| r.rung > 0) {
            let below = l.rungs[l.rungs.iter().position(|&b| b == r.budget).unwrap() - 1];
            ensure(
                records
                    .iter()
                    .any(|p| p.config_id == r.config_id && p.budget == below && p.job_id < r.job_id),
                || format!("run {run}: config {} skipped budget {below}", r.config_id),
            )?;
        }
    }
    Ok("[4,2,1]/[3,1]/[3]; 1000 promotions; 100 runs without skipping".into())
}

fn optimizer_beats_random() -> Outcome {
    let l = ladder();
    let mut wins = 0;
    let mut details = Vec::new();
    for seed in 0..20u64 {
        let objective = Arc::new(SyntheticCurve::wells(0.01));
        let space = Arc::new(objective.configuration_space().clone());
        let limits = Limits {
            max_iterations: None,
            max_evaluations: Some(200),
            wall_clock: None,
            seed,
            workers: 1,
        };
        let bohb = Optimizer::new(space.clone(), objective.clone(), l.clone(), limits)
            .run()
            .map_err(|e| e.to_string())?;
        let (_, bohb_loss) = incumbent(&bohb.history, l.b_max).map_err(|e| e.to_string())?;
        let random = random_search(space, objective.as_ref(), l.b_max, 200, seed).map_err(|e| e.to_string())?;
        let (_, random_loss) = incumbent(&random, l.b_max).map_err(|e| e.to_string())?;
        if bohb_loss <= random_loss {
            wins += 1;
        }
        details.push(format!("{bohb_loss:.4}/{random_loss:.4}"));
    }
    let p = 1.0 - Binomial::new(0.5, 20).unwrap().cdf(wins - 1);
    ensure(wins >= 15 && p < 0.05, || {
        format!("BOHB won {wins}/20 (p = {p:.4}); bohb/random: {}", details.join(" "))
    })?;
    Ok(format!("BOHB won {wins}/20, sign test p = {p:.2e}"))
}

const MINI: [&str; 5] = ["adult", "christine", "fabert", "jasmine", "vehicle"];

fn mini_bundle(name: &str) -> Result<Arc<ReplayBundle>, String> {
    load_replay(fixtures().join("mini_lcbench").join(format!("{name}.json")))
        .map(Arc::new)
        .map_err(|e| e.to_string())
}

fn portfolio_warmstart() -> Outcome {
    let portfolio = Portfolio::load(&fixtures().join("portfolio.json")).map_err(|e| e.to_string())?;
    ensure(portfolio.entries.len() == 16, || {
        format!("{} entries", portfolio.entries.len())
    })?;
    let l = ladder();
    let mut better = 0;
    let mut rows = Vec::new();
    for name in MINI {
        let bundle = mini_bundle(name)?;
        let mut means = [0.0; 2];
        for (k, warm) in [true, false].into_iter().enumerate() {
            for seed in 0..10u64 {
                let objective = Arc::new(ReplayObjective::new(bundle.clone(), LookupMode::Strict));
                let mut opt = Optimizer::new(bundle.space.clone(), objective, l.clone(), Limits::iterations(1, seed));
                if warm {
                    opt.portfolio = portfolio.configurations();
                }
                let outcome = opt.run().map_err(|e| e.to_string())?;
                if warm {
                    let head = &outcome.history.records()[..16];
                    ensure(
                        head.iter().all(|r| r.origin == multifid::optimizer::Origin::Portfolio),
                        || "first 16 records are not portfolio entries".into(),
                    )?;
                }
                means[k] += incumbent(&outcome.history, l.b_max).map_err(|e| e.to_string())?.1 / 10.0;
            }
        }
        if means[0] <= means[1] {
            better += 1;
        }
        rows.push(format!("{name} {:.4}<={:.4}", means[0], means[1]));
    }
    ensure(better >= 4, || format!("{better}/5: {}", rows.join(", ")))?;
    Ok(format!("{better}/5 datasets ({})", rows.join(", ")))
}

fn greedy_portfolio_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..200 {
        let c = rng.gen_range(2..=6);
        let d = rng.gen_range(1..=4);
        let scores: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..d).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect())
            .collect();
        let regrets = relative_regret(&scores, RegretKind::Relative);
        let objective = |set: &[usize]| -> f64 {
            (0..d)
                .map(|j| set.iter().map(|&i| regrets[i][j]).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / d as f64
        };
        // lowest index among the exact minimizers; picks are without replacement
        let argmin = |f: &dyn Fn(usize) -> f64| -> usize {
            let mut best = 0;
            for i in 1..c {
                if f(i) < f(best) {
                    best = i;
                }
            }
            best
        };
        let first = argmin(&|i| objective(&[i]));
        let second = argmin(&|i| {
            if i == first {
                f64::INFINITY
            } else {
                objective(&[first, i])
            }
        });
        let (picks, _) = greedy_build(&regrets, 2).map_err(|e| e.to_string())?;
        ensure(picks == vec![first, second], || {
            format!("case {case}: {picks:?} vs [{first}, {second}]")
        })?;
        let curve = portfolio_size_curve(&regrets, c).map_err(|e| e.to_string())?;
        ensure(curve.windows(2).all(|w| w[1].1 <= w[0].1), || {
            format!("case {case}: curve {curve:?}")
        })?;
    }
    Ok("200 matrices".into())
}

fn random_store(rng: &mut ChaCha8Rng, n_models: usize) -> PredictionStore {
    let (n, k) = (20, 3);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let mut store = PredictionStore::new(labels);
    for m in 0..n_models {
        let mut data = Vec::with_capacity(n * k);
        for _ in 0..n {
            let row: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = row.iter().sum();
            data.extend(row.iter().map(|v| v / total));
        }
        store
            .push(PredictionEntry {
                model_id: format!("m{m}"),
                budget: 50,
                predictions: PredictionMatrix::new(n, k, data).unwrap(),
                val_loss: rng.gen(),
                timestamp: m as f64,
            })
            .unwrap();
    }
    store
}

fn accuracy_of_sum(store: &PredictionStore, members: &[usize]) -> f64 {
    let (n, k) = store.entries[0].predictions.shape();
    let mut correct = 0;
    for r in 0..n {
        let mut best = (f64::NEG_INFINITY, 0);
        for c in 0..k {
            let s: f64 = members.iter().map(|&m| store.entries[m].predictions.row(r)[c]).sum();
            if s > best.0 {
                best = (s, c);
            }
        }
        if best.1 == store.true_labels[r] {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

fn ensemble_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..50 {
        let n_models = rng.gen_range(1..=5);
        let store = random_store(&mut rng, n_models);
        let pick_best = |f: &dyn Fn(usize) -> f64| {
            let mut best = 0;
            for i in 1..n_models {
                if f(i) > f(best) {
                    best = i;
                }
            }
            best
        };
        let first = pick_best(&|i| accuracy_of_sum(&store, &[i]));
        let second = pick_best(&|i| accuracy_of_sum(&store, &[first, i]));
        let sel = greedy_select(&store, 2, Metric::Accuracy).map_err(|e| e.to_string())?;
        ensure(sel.picks == vec![first, second], || {
            format!("case {case}: {:?} vs [{first}, {second}]", sel.picks)
        })?;
        let full = greedy_select(&store, 50, Metric::Accuracy).map_err(|e| e.to_string())?;
        let best_single = (0..n_models).map(|i| accuracy_of_sum(&store, &[i])).fold(0.0, f64::max);
        ensure(full.ensemble.score >= best_single, || {
            format!("case {case}: ensemble {} < single {best_single}", full.ensemble.score)
        })?;
    }
    Ok("50 stores".into())
}

fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn spearman_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    for _ in 0..1_000 {
        let n = rng.gen_range(3..60);
        let levels = rng.gen_range(2..12);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 * 0.5).collect();
        match spearman(&x, &y) {
            Ok(r) => {
                let o = spearman_oracle(&x, &y);
                ensure((r - o).abs() <= 1e-12, || format!("{r} vs {o} on {x:?} {y:?}"))?;
                checked += 1;
            }
            Err(_) => {
                let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
                ensure(constant(&x) || constant(&y), || "spurious error".into())?;
            }
        }
    }
    ensure(average_ranks(&[2.0, 1.0, 2.0]) == vec![2.5, 1.0, 2.5], || {
        "average ranks".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bundles = Vec::new();
    for k in 0..5 {
        let objective = SyntheticCurve::task(k, 0.0);
        let space = objective.configuration_space().clone();
        let configs: Vec<_> = (0..200).map(|_| space.sample_uniform(&mut rng)).collect();
        let doc = objective
            .replay_document(&configs, &[0], 50, &[], "space1.json")
            .map_err(|e| e.to_string())?;
        bundles.push(ReplayBundle::from_document(doc, Arc::new(space), "memory").map_err(|e| e.to_string())?);
    }
    let refs: Vec<&ReplayBundle> = bundles.iter().collect();
    let report = budget_correlation(&refs, 12, 50, CorrelationMode::NonAdaptive).map_err(|e| e.to_string())?;
    ensure(report.mean >= 0.8, || format!("rho(12, 50) = {:.3}", report.mean))?;
    Ok(format!(
        "{checked} vectors; rho(12, 50) = {:.3} ± {:.3}",
        report.mean, report.std
    ))
}

fn samples(n: usize, d: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
    let y = x.iter().map(|p| f(p)).collect();
    (x, y)
}

/// First-order variance fractions of one tree by midpoint quadrature on a
/// `g^d` grid.
fn quadrature_first_order(tree: &multifid::analysis::Tree, d: usize, g: usize) -> Option<Vec<f64>> {
    let total_points = g.pow(d as u32);
    let mut values = Vec::with_capacity(total_points);
    let mut point = vec![0.0; d];
    for idx in 0..total_points {
        let mut rest = idx;
        for p in point.iter_mut() {
            *p = ((rest % g) as f64 + 0.5) / g as f64;
            rest /= g;
        }
        values.push(tree.predict(&point));
    }
    let mean = values.iter().sum::<f64>() / total_points as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / total_points as f64;
    if var <= 1e-15 {
        return None;
    }
    Some(
        (0..d)
            .map(|j| {
                let stride = g.pow(j as u32);
                let mut marg = vec![0.0; g];
                for (idx, v) in values.iter().enumerate() {
                    marg[(idx / stride) % g] += v;
                }
                let per = (total_points / g) as f64;
                marg.iter().map(|m| (m / per - mean).powi(2)).sum::<f64>() / g as f64 / var
            })
            .collect(),
    )
}

fn importance() -> Outcome {
    let forest = |x: &[Vec<f64>], y: &[f64]| fit_forest(x, y, ForestSettings::default(), 1).map_err(|e| e.to_string());
    let unit = |d: usize| vec![(0.0, 1.0); d];
    let (x, y) = samples(500, 2, 10, |p| p[0]);
    let single = fanova_first_order(&forest(&x, &y)?, &unit(2));
    ensure(single[0] >= 0.9, || format!("f = x1: {single:?}"))?;
    let (x, y) = samples(800, 2, 11, |p| p[0] + p[1]);
    let additive = fanova_first_order(&forest(&x, &y)?, &unit(2));
    ensure((additive[0] - additive[1]).abs() <= 0.1, || {
        format!("f = x1 + x2: {additive:?}")
    })?;

    let mut worst: f64 = 0.0;
    let surfaces: [(usize, Surface); 3] = [
        (2, |p| p[0] * p[1] + 0.3 * p[1]),
        (3, |p| (3.0 * p[0]).sin() + p[1] * p[2]),
        (3, |p| (p[0] - 0.5).abs() + 2.0 * p[2] * p[2]),
    ];
    for (i, (d, f)) in surfaces.into_iter().enumerate() {
        let (x, y) = samples(400, d, 20 + i as u64, f);
        let fo = forest(&x, &y)?;
        let ours = fanova_first_order(&fo, &unit(d));
        let g = if d == 2 { 200 } else { 40 };
        let mut oracle = vec![0.0; d];
        for t in &fo.trees {
            if let Some(q) = quadrature_first_order(t, d, g) {
                oracle.iter_mut().zip(q).for_each(|(o, v)| *o += v);
            }
        }
        oracle.iter_mut().for_each(|o| *o /= fo.trees.len() as f64);
        for (a, b) in ours.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 0.05, || format!("quadrature gap {worst:.4}"))?;

    let hp = |n: &str| HyperparameterSpec {
        name: n.into(),
        domain: Domain::Real { lo: 0.0, hi: 1.0 },
        log_scale: false,
        default: Value::Real(0.5),
    };
    let space = ConfigurationSpace::new("square", vec![hp("x1"), hp("x2")], vec![]).map_err(|e| e.to_string())?;
    let inc = space.default_configuration();
    let r = lpi(&|u| (u[0] - 0.5).powi(2), &space, &inc, 21, None).map_err(|e| e.to_string())?;
    ensure(r.scores == vec![1.0, 0.0], || format!("LPI {:?}", r.scores))?;
    let r = lpi(&|u| (u[0] - 0.5).powi(2) + (u[1] - 0.5).powi(2), &space, &inc, 21, None).map_err(|e| e.to_string())?;
    ensure(r.scores.iter().all(|s| (s - 0.5).abs() < 1e-12), || {
        format!("LPI {:?}", r.scores)
    })?;
    ensure((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12, || "LPI sum".into())?;
    Ok(format!(
        "x1 {:.3}; x1+x2 {:.3}/{:.3}; quadrature gap {worst:.4}",
        single[0], additive[0], additive[1]
    ))
}

fn sleep_jobs(n: u64) -> Vec<Job> {
    (0..n)
        .map(|i| Job {
            job_id: i,
            config: Default::default(),
            budget: 1,
            seed: i,
        })
        .collect()
}

fn parallel_speedup() -> Outcome {
    let objective = Arc::new(SleepObjective {
        duration: Duration::from_millis(60),
        loss: 0.5,
    });
    let timed = |workers: usize| {
        let mut ex = Executor::new(objective.clone(), workers);
        let t = Instant::now();
        let results = ex.run_batch(sleep_jobs(30));
        (t.elapsed().as_secs_f64(), results.len())
    };
    let (sequential, n1) = timed(1);
    let (parallel, n3) = timed(3);
    let ratio = parallel / sequential;
    ensure(n1 == 30 && n3 == 30, || "missing results".into())?;
    ensure(ratio <= 0.45, || {
        format!("ratio {ratio:.3} ({parallel:.2}s vs {sequential:.2}s)")
    })?;

    let mut ex = Executor::new(objective.clone(), 3);
    for job in sleep_jobs(30) {
        ex.submit(job);
    }
    std::thread::sleep(Duration::from_millis(20));
    ex.kill_worker(0);
    let mut results = Vec::new();
    while let Some(r) = ex.next_result() {
        results.push(r);
    }
    let mut ids: Vec<u64> = results.iter().map(|r| r.job_id).collect();
    ids.sort_unstable();
    ensure(ids == (0..30).collect::<Vec<_>>(), || format!("results for {ids:?}"))?;
    ensure(results.iter().all(|r| r.status == JobStatus::Ok), || {
        "a job crashed".into()
    })?;
    let rerun: Vec<u64> = ex
        .executions()
        .iter()
        .filter(|(_, n)| **n > 1)
        .map(|(id, _)| *id)
        .collect();
    ensure(rerun.len() == 1, || format!("re-executed jobs {rerun:?}"))?;
    ensure(ex.alive_workers() == 2, || {
        format!("{} workers alive", ex.alive_workers())
    })?;
    Ok(format!("ratio {ratio:.3}; kill re-ran job {}", rerun[0]))
}

fn replay_run(dir: &Path, seed: u64, resume: Vec<multifid::optimizer::EvaluationRecord>) -> Result<RunHistory, String> {
    let bundle = mini_bundle("adult")?;
    let objective = Arc::new(ReplayObjective::new(bundle.clone(), LookupMode::Strict));
    let mut opt = Optimizer::new(bundle.space.clone(), objective, ladder(), Limits::iterations(20, seed));
    opt.run_dir = Some(dir.to_path_buf());
    opt.resume = resume;
    opt.run().map(|o| o.history).map_err(|e| e.to_string())
}

fn determinism_and_resume() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let full = replay_run(&a, 7, Vec::new())?;
    replay_run(&b, 7, Vec::new())?;
    let read = |d: &Path| std::fs::read(d.join(HISTORY_FILE)).map_err(|e| e.to_string());
    let bytes = read(&a)?;
    ensure(bytes == read(&b)?, || "histories differ".into())?;

    // interrupted run: keep the first 40% of lines plus a torn partial line
    let text = String::from_utf8(bytes.clone()).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().collect();
    let cut = lines.len() * 2 / 5;
    std::fs::create_dir_all(&c).map_err(|e| e.to_string())?;
    let mut partial = lines[..cut].join("\n");
    partial.push('\n');
    partial.push_str(&lines[cut][..lines[cut].len() / 2]);
    std::fs::write(c.join(HISTORY_FILE), partial).map_err(|e| e.to_string())?;
    let cached = RunHistory::read_records(&c.join(HISTORY_FILE)).map_err(|e| e.to_string())?;
    ensure(cached.len() == cut, || {
        format!("{} cached records, expected {cut}", cached.len())
    })?;
    let resumed = replay_run(&c, 7, cached)?;
    let (ca, la) = incumbent(&full, 50).map_err(|e| e.to_string())?;
    let (cb, lb) = incumbent(&resumed, 50).map_err(|e| e.to_string())?;
    ensure(ca == cb && la == lb, || format!("incumbents {la} vs {lb}"))?;
    ensure(read(&c)? == bytes, || "resumed history differs".into())?;
    Ok(format!("{} records identical; resumed from {cut}", lines.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("budget ladder", budget_ladder_rungs),
        ("funnel widths", funnel_widths_reference),
        ("successive halving schedule", schedule),
        ("optimizer beats random search", optimizer_beats_random),
        ("portfolio warmstart helps", portfolio_warmstart),
        ("greedy portfolio oracle", greedy_portfolio_oracle),
        ("ensemble selection oracle", ensemble_oracle),
        ("spearman correctness", spearman_correctness),
        ("importance sanity", importance),
        ("parallel speedup", parallel_speedup),
        ("determinism and persistence", determinism_and_resume),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
