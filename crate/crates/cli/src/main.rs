//! `multifid`: run optimizations, build portfolios and ensembles, analyze
//! benchmarks. Successful commands print one `RESULT {json}` line.

mod analyze;
mod fixture;

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use multifid::configspace::{Configuration, ConfigurationSpace};
use multifid::ensemble::{ensemble_trajectory, greedy_select, topk_filter, Metric, PredictionStore};
use multifid::executor::{objective_from_uri, serve_socket, Objective};
use multifid::optimizer::{
    budget_ladder, incumbent, Limits, Optimizer, RunHistory, HISTORY_FILE, PREDICTIONS_DIR, SPACE_FILE,
};
use multifid::portfolio::{build_matrix, run_incumbent, Portfolio, RegretKind};
use multifid::shaped_arch::{funnel_widths, resnet_group_widths, FunnelShape};

#[derive(Parser)]
#[command(name = "multifid", version, about = "Multi-fidelity hyperparameter optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run BOHB on an objective and write a run directory.
    Optimize(OptimizeArgs),
    /// Build a performance matrix from run incumbents and a greedy portfolio.
    Portfolio(PortfolioArgs),
    /// Greedy ensemble selection over a run's stored predictions.
    Ensemble(EnsembleArgs),
    /// Budget correlation, importance, heatmaps and portfolio-size curves.
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
    /// Print the layer widths of a shaped network.
    Shape(ShapeArgs),
    /// Serve an objective to remote optimizers over TCP.
    ServeWorker(ServeArgs),
    /// Write the replay benchmark bundles used by the tests.
    GenFixture(fixture::FixtureArgs),
}

#[derive(Args)]
struct OptimizeArgs {
    /// Space document; defaults to the objective's own space.
    #[arg(long)]
    space: Option<PathBuf>,
    /// `replay:<path>[?mode=nearest]`, `synthetic:<name>` or `socket:<addr>`.
    #[arg(long)]
    objective: String,
    #[arg(long, default_value_t = 12)]
    b_min: u64,
    #[arg(long, default_value_t = 50)]
    b_max: u64,
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    /// Number of Hyperband brackets to run.
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    evaluations: Option<usize>,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    wall_clock: Option<f64>,
    /// Overridden by MULTIFID_SEED.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Warmstart portfolio evaluated during the first iteration.
    #[arg(long)]
    portfolio: Option<PathBuf>,
    /// Run directory; defaults to `runs/<run id>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue the run stored in `--out`, reusing its finished evaluations.
    #[arg(long, requires = "out")]
    resume: bool,
}

#[derive(Args)]
struct PortfolioArgs {
    /// Run directories whose b_max incumbents are the candidates.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// One objective URI per meta dataset.
    #[arg(long, num_args = 1.., required = true)]
    objectives: Vec<String>,
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Budget the matrix is evaluated at; defaults to the runs' b_max.
    #[arg(long)]
    b_max: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Regret as an accuracy difference instead of a relative gap.
    #[arg(long)]
    absolute_regret: bool,
    /// Space reference stored in the portfolio; defaults to the first run's space.
    #[arg(long)]
    space: Option<String>,
    /// Directory receiving portfolio.json and matrix.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Accuracy,
    BalancedAccuracy,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Accuracy => Metric::Accuracy,
            MetricArg::BalancedAccuracy => Metric::BalancedAccuracy,
        }
    }
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long)]
    run: PathBuf,
    /// Models kept before selection, by validation loss.
    #[arg(long, default_value_t = 30)]
    k: usize,
    /// Rounds of greedy selection.
    #[arg(long, default_value_t = 50)]
    size: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Accuracy)]
    metric: MetricArg,
    /// Also write the ensemble score over time.
    #[arg(long)]
    trajectory: bool,
    /// Spacing of trajectory points in seconds; every finish time when unset.
    #[arg(long, requires = "trajectory")]
    interval: Option<f64>,
    /// Defaults to `<run>/ensemble.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ShapeArgs {
    #[arg(long)]
    n_max: u64,
    #[arg(long)]
    layers: u64,
    #[arg(long)]
    n_out: u64,
    /// Treat layers as ResNet groups with this many blocks each.
    #[arg(long)]
    blocks_per_group: Option<u64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    objective: String,
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    #[arg(long)]
    space: Option<PathBuf>,
    /// Where prediction matrices are written for the client.
    #[arg(long)]
    predictions_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Optimize(a) => optimize(a),
        Command::Portfolio(a) => portfolio(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Analyze(a) => analyze::run(a),
        Command::Shape(a) => shape(a),
        Command::ServeWorker(a) => serve(a),
        Command::GenFixture(a) => fixture::run(a),
    };
    match outcome {
        Ok(summary) => {
            println!("RESULT {summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// `--seed`, unless MULTIFID_SEED is set.
fn effective_seed(flag: u64) -> Result<u64> {
    match std::env::var("MULTIFID_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("MULTIFID_SEED={v} is not an integer")),
        Err(_) => Ok(flag),
    }
}

fn load_space(path: &Path) -> Result<Arc<ConfigurationSpace>> {
    let space = ConfigurationSpace::from_path(path).with_context(|| format!("loading space {}", path.display()))?;
    Ok(Arc::new(space))
}

/// Opens an objective and names it: replay bundles by file stem, other
/// schemes by their address.
pub(crate) fn open_objective(
    uri: &str,
    space: Option<Arc<ConfigurationSpace>>,
) -> Result<(String, Arc<dyn Objective>)> {
    let objective = objective_from_uri(uri, space).with_context(|| format!("loading objective {uri}"))?;
    let rest = uri.split_once(':').map_or(uri, |(_, r)| r);
    let label = match uri.strip_prefix("replay:") {
        Some(path) => {
            let path = path.split_once('?').map_or(path, |(p, _)| p);
            Path::new(path)
                .file_stem()
                .map_or_else(|| rest.to_string(), |s| s.to_string_lossy().into_owned())
        }
        None => rest.to_string(),
    };
    Ok((label, objective))
}

fn optimize(a: OptimizeArgs) -> Result<Value> {
    let seed = effective_seed(a.seed)?;
    let given_space = a.space.as_deref().map(load_space).transpose()?;
    let (_, objective) = open_objective(&a.objective, given_space.clone())?;
    let space = match given_space {
        Some(s) => s,
        None => Arc::new(
            objective
                .space()
                .cloned()
                .context("objective has no space of its own; pass --space")?,
        ),
    };
    if a.workers == 0 {
        bail!("--workers must be at least 1");
    }
    let ladder = budget_ladder(a.b_min, a.b_max, a.eta)?;
    let limits = Limits {
        max_iterations: a.iterations,
        max_evaluations: a.evaluations,
        wall_clock: a.wall_clock,
        seed,
        workers: a.workers,
    };
    let mut opt = Optimizer::new(space.clone(), objective, ladder.clone(), limits);
    opt.objective_label = a.objective.clone();
    if let Some(path) = &a.portfolio {
        let p = Portfolio::load(path)?;
        opt.portfolio = p.configurations();
    }
    let run_id = opt.metadata()["run_id"].as_str().unwrap_or_default().to_string();
    let out = a.out.unwrap_or_else(|| PathBuf::from("runs").join(&run_id));
    if a.resume {
        let path = out.join(HISTORY_FILE);
        opt.resume = RunHistory::read_records(&path)?;
    }
    let resumed = opt.resume.len();
    opt.run_dir = Some(out.clone());
    let outcome = opt.run()?;
    let history = &outcome.history;
    let best = incumbent(history, ladder.b_max).ok();
    Ok(json!({
        "command": "optimize",
        "run_id": outcome.run_id,
        "run_dir": out.display().to_string(),
        "evaluations": history.len(),
        "resumed": resumed,
        "stop": outcome.stop,
        "ladder": ladder.rungs,
        "incumbent_loss": best.as_ref().map(|b| b.1),
        "incumbent": best.map(|b| b.0),
        "predictions": outcome.predictions.map_or(0, |s| s.len()),
    }))
}

fn portfolio(a: PortfolioArgs) -> Result<Value> {
    let mut candidates: Vec<(String, Configuration)> = Vec::new();
    for dir in &a.runs {
        let (config, _) = run_incumbent(dir)?;
        if candidates.iter().any(|(_, c)| *c == config) {
            continue;
        }
        let source = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        candidates.push((source, config));
    }
    let b_max = match a.b_max {
        Some(b) => b,
        None => {
            let text = std::fs::read_to_string(a.runs[0].join("meta.json"))?;
            let meta: Value = serde_json::from_str(&text)?;
            meta["ladder"]["b_max"]
                .as_u64()
                .context("run metadata lacks ladder.b_max")?
        }
    };
    let mut objectives = Vec::with_capacity(a.objectives.len());
    for uri in &a.objectives {
        objectives.push(open_objective(uri, None)?);
    }
    let matrix = build_matrix(&candidates, &objectives, b_max, a.workers.max(1))?;
    let kind = if a.absolute_regret {
        RegretKind::Absolute
    } else {
        RegretKind::Relative
    };
    let space = a
        .space
        .unwrap_or_else(|| a.runs[0].join(SPACE_FILE).display().to_string());
    let portfolio = Portfolio::build(&matrix, a.size, kind, space)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let portfolio_path = a.out_dir.join("portfolio.json");
    let matrix_path = a.out_dir.join("matrix.csv");
    portfolio.save(&portfolio_path)?;
    std::fs::write(&matrix_path, matrix.to_csv())?;
    Ok(json!({
        "command": "portfolio",
        "portfolio": portfolio_path.display().to_string(),
        "matrix": matrix_path.display().to_string(),
        "candidates": candidates.len(),
        "datasets": matrix.datasets,
        "size": portfolio.entries.len(),
        "regret_curve": portfolio.construction.regret_curve,
    }))
}

fn ensemble(a: EnsembleArgs) -> Result<Value> {
    let store = PredictionStore::load(&a.run.join(PREDICTIONS_DIR))
        .with_context(|| format!("no predictions in run {}", a.run.display()))?;
    if store.is_empty() {
        bail!("run {} stored no predictions", a.run.display());
    }
    let metric: Metric = a.metric.into();
    let filtered = topk_filter(&store, a.k)?;
    let selection = greedy_select(&filtered, a.size, metric)?;
    let labels = &filtered.true_labels;
    let n_classes = filtered.n_classes();
    let (best_single, best_single_score) = filtered
        .entries
        .iter()
        .map(|e| {
            (
                e.model_id.clone(),
                metric.score(&e.predictions.argmax(), labels, n_classes),
            )
        })
        .fold((String::new(), f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
    let weights: Vec<Value> = selection
        .ensemble
        .weights()
        .into_iter()
        .map(|(id, w)| json!({"model_id": id, "weight": w}))
        .collect();
    let document = json!({
        "ensemble": selection.ensemble,
        "weights": weights,
        "picks": selection.picks.iter().map(|&i| filtered.entries[i].model_id.clone()).collect::<Vec<_>>(),
        "round_scores": selection.round_scores,
        "best_single": {"model_id": best_single, "score": best_single_score},
        "k": a.k,
    });
    let out = a.out.unwrap_or_else(|| a.run.join("ensemble.json"));
    std::fs::write(&out, format!("{}\n", serde_json::to_string_pretty(&document)?))?;
    let mut trajectory_path = None;
    if a.trajectory {
        let points = ensemble_trajectory(&store, a.interval, a.k, a.size, metric)?;
        let mut csv = String::from("wall_time_s,ensemble_score\n");
        for (t, s) in points {
            csv.push_str(&format!("{t:?},{s:?}\n"));
        }
        let path = out.with_file_name("ensemble_trajectory.csv");
        std::fs::write(&path, csv)?;
        trajectory_path = Some(path.display().to_string());
    }
    Ok(json!({
        "command": "ensemble",
        "out": out.display().to_string(),
        "score": selection.ensemble.score,
        "size": selection.ensemble.size,
        "members": selection.ensemble.members.len(),
        "best_single_score": best_single_score,
        "trajectory": trajectory_path,
    }))
}

fn shape(a: ShapeArgs) -> Result<Value> {
    let widths = match a.blocks_per_group {
        Some(blocks) => resnet_group_widths(a.n_max, a.layers, blocks, a.n_out)?.blocks,
        None => funnel_widths(FunnelShape::new(a.n_max, a.layers, a.n_out)?)?,
    };
    println!("{}", widths.iter().map(u64::to_string).collect::<Vec<_>>().join(" "));
    Ok(json!({"command": "shape", "widths": widths}))
}

fn serve(a: ServeArgs) -> Result<Value> {
    let space = a.space.as_deref().map(load_space).transpose()?;
    let (_, objective) = open_objective(&a.objective, space)?;
    let listener = TcpListener::bind(&a.listen).with_context(|| format!("binding {}", a.listen))?;
    let addr = listener.local_addr()?;
    // announced before blocking so callers can connect
    println!("LISTENING {addr}");
    serve_socket(listener, objective, a.predictions_dir)?;
    Ok(json!({"command": "serve-worker", "addr": addr.to_string()}))
}
