use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde_json::{json, Value};

use multifid::analysis::{
    budget_correlation, fanova_report, fit_forest, lpi, paired_losses, performance_heatmap, shared_accuracy_matrix,
    spearman, CorrelationMode, ForestSettings, ImportanceReport,
};
use multifid::configspace::{Configuration, ConfigurationSpace};
use multifid::executor::{load_replay, ReplayBundle};
use multifid::optimizer::{RunHistory, HISTORY_FILE, SPACE_FILE};
use multifid::portfolio::{portfolio_size_curve, read_matrix_csv, relative_regret, RegretKind};

#[derive(Subcommand)]
pub enum AnalyzeCommand {
    /// Spearman correlation of losses between budget pairs.
    Correlation(CorrelationArgs),
    /// fANOVA and local parameter importance at one budget.
    Importance(ImportanceArgs),
    /// Accuracy and regret matrices across datasets.
    Heatmap(HeatmapArgs),
    /// Mean regret of greedy portfolios of growing size.
    PortfolioCurve(CurveArgs),
}

#[derive(Args)]
pub struct CorrelationArgs {
    /// Replay bundles, one per dataset.
    #[arg(long, num_args = 1.., conflicts_with = "run")]
    bundles: Vec<PathBuf>,
    /// A run directory; correlates configurations evaluated at both budgets.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Budget pairs as `a:b`.
    #[arg(long, num_args = 1.., value_delimiter = ',', default_value = "12:50,25:50,12:25")]
    pairs: Vec<String>,
    #[arg(long, value_enum, num_args = 1.., value_delimiter = ',', default_value = "non-adaptive")]
    modes: Vec<ModeArg>,
    /// CSV destination; rows are also summarized on stdout.
    #[arg(long, default_value = "correlation.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    NonAdaptive,
    Adaptive,
    Cross,
}

impl From<ModeArg> for CorrelationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::NonAdaptive => Self::NonAdaptive,
            ModeArg::Adaptive => Self::Adaptive,
            ModeArg::Cross => Self::Cross,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Fanova,
    Lpi,
    Both,
}

#[derive(Args)]
pub struct ImportanceArgs {
    #[arg(long, conflicts_with = "run", required_unless_present = "run")]
    bundle: Option<PathBuf>,
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    budget: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    method: MethodArg,
    /// Points per numeric hyperparameter for local importance.
    #[arg(long, default_value_t = 21)]
    grid_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "importance.csv")]
    out: PathBuf,
}

#[derive(Args)]
pub struct HeatmapArgs {
    #[arg(long, num_args = 2.., required = true)]
    bundles: Vec<PathBuf>,
    /// Defaults to the bundles' largest budget.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Also write SVG renderings.
    #[arg(long)]
    svg: bool,
    /// Omit the generation timestamp from SVG output.
    #[arg(long)]
    reproducible: bool,
}

#[derive(Args)]
pub struct CurveArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Defaults to the number of candidates.
    #[arg(long)]
    max_size: Option<usize>,
    #[arg(long)]
    absolute_regret: bool,
    #[arg(long, default_value = "portfolio_curve.csv")]
    out: PathBuf,
}

pub fn run(cmd: AnalyzeCommand) -> Result<Value> {
    match cmd {
        AnalyzeCommand::Correlation(a) => correlation(a),
        AnalyzeCommand::Importance(a) => importance(a),
        AnalyzeCommand::Heatmap(a) => heatmap(a),
        AnalyzeCommand::PortfolioCurve(a) => curve(a),
    }
}

fn parse_pair(s: &str) -> Result<(u64, u64)> {
    let (a, b) = s
        .split_once(':')
        .with_context(|| format!("budget pair `{s}` is not `a:b`"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn load_bundles(paths: &[PathBuf]) -> Result<Vec<ReplayBundle>> {
    paths
        .iter()
        .map(|p| load_replay(p).with_context(|| format!("loading bundle {}", p.display())))
        .collect()
}

fn correlation(a: CorrelationArgs) -> Result<Value> {
    let pairs: Vec<(u64, u64)> = a.pairs.iter().map(|p| parse_pair(p)).collect::<Result<_>>()?;
    let mut csv = String::from("dataset,budget_a,budget_b,mode,rho\n");
    let mut summary = Vec::new();
    if let Some(run) = &a.run {
        let records = RunHistory::read_records(&run.join(HISTORY_FILE))?;
        for &(ba, bb) in &pairs {
            let (x, y) = paired_losses(&records, ba, bb);
            let rho = spearman(&x, &y).with_context(|| format!("budgets {ba}:{bb} ({} shared configs)", x.len()))?;
            csv.push_str(&format!("run,{ba},{bb},non-adaptive,{rho:?}\n"));
            summary.push(json!({"budget_a": ba, "budget_b": bb, "n": x.len(), "rho": rho}));
        }
    } else {
        if a.bundles.is_empty() {
            bail!("pass --bundles or --run");
        }
        let bundles = load_bundles(&a.bundles)?;
        let refs: Vec<&ReplayBundle> = bundles.iter().collect();
        for &mode in &a.modes {
            for &(ba, bb) in &pairs {
                let report = budget_correlation(&refs, ba, bb, mode.into())?;
                for row in report.csv_rows() {
                    csv.push_str(&row);
                    csv.push('\n');
                }
                summary.push(json!({
                    "budget_a": ba,
                    "budget_b": bb,
                    "mode": report.mode,
                    "mean": report.mean,
                    "std": report.std,
                }));
            }
        }
    }
    std::fs::write(&a.out, csv)?;
    Ok(json!({"command": "analyze correlation", "out": a.out.display().to_string(), "pairs": summary}))
}

/// Encoded inputs and losses at one budget, plus the space and incumbent.
struct Dataset {
    space: Arc<ConfigurationSpace>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    configs: Vec<Configuration>,
}

fn bundle_dataset(path: &Path, budget: u64) -> Result<Dataset> {
    let bundle = load_replay(path)?;
    let mut d = Dataset {
        space: bundle.space.clone(),
        x: Vec::new(),
        y: Vec::new(),
        configs: Vec::new(),
    };
    for (slot, c) in bundle.configs().iter().enumerate() {
        let loss = bundle
            .mean_val_loss(slot, budget)
            .with_context(|| format!("budget {budget} exceeds the recorded curves"))?;
        d.x.push(d.space.to_unit_cube(c)?);
        d.y.push(loss);
        d.configs.push(c.clone());
    }
    Ok(d)
}

fn run_dataset(dir: &Path, budget: u64) -> Result<Dataset> {
    let space = Arc::new(ConfigurationSpace::from_path(dir.join(SPACE_FILE))?);
    let records = RunHistory::read_records(&dir.join(HISTORY_FILE))?;
    let mut d = Dataset {
        space,
        x: Vec::new(),
        y: Vec::new(),
        configs: Vec::new(),
    };
    for r in records.iter().filter(|r| r.budget == budget && !r.crashed) {
        d.x.push(d.space.to_unit_cube(&r.configuration)?);
        d.y.push(r.loss);
        d.configs.push(r.configuration.clone());
    }
    Ok(d)
}

fn importance(a: ImportanceArgs) -> Result<Value> {
    let data = match (&a.bundle, &a.run) {
        (Some(b), _) => bundle_dataset(b, a.budget)?,
        (None, Some(r)) => run_dataset(r, a.budget)?,
        (None, None) => bail!("pass --bundle or --run"),
    };
    let forest = fit_forest(&data.x, &data.y, ForestSettings::default(), a.seed)?;
    let mut reports: Vec<ImportanceReport> = Vec::new();
    if a.method != MethodArg::Lpi {
        reports.push(fanova_report(&forest, &data.space, Some(a.budget)));
    }
    if a.method != MethodArg::Fanova {
        let best = (0..data.y.len())
            .min_by(|&i, &j| data.y[i].total_cmp(&data.y[j]))
            .context("no evaluations at this budget")?;
        let surrogate = |u: &[f64]| forest.predict(u);
        reports.push(lpi(
            &surrogate,
            &data.space,
            &data.configs[best],
            a.grid_size,
            Some(a.budget),
        )?);
    }
    let mut csv = String::from("hyperparameter,budget,importance,method\n");
    for r in &reports {
        for row in r.csv_rows() {
            csv.push_str(&row);
            csv.push('\n');
        }
    }
    std::fs::write(&a.out, csv)?;
    Ok(json!({
        "command": "analyze importance",
        "out": a.out.display().to_string(),
        "samples": data.y.len(),
        "oob_rmse": forest.oob_rmse,
        "reports": reports,
    }))
}

fn heatmap(a: HeatmapArgs) -> Result<Value> {
    let bundles = load_bundles(&a.bundles)?;
    let refs: Vec<&ReplayBundle> = bundles.iter().collect();
    let budget = a
        .budget
        .unwrap_or_else(|| bundles.iter().map(|b| b.b_max).min().unwrap_or(1));
    let (configs, datasets, scores) = shared_accuracy_matrix(&refs, budget)?;
    if configs.len() < 2 {
        bail!("heatmap needs at least 2 shared configurations");
    }
    let labels: Vec<String> = (0..configs.len()).map(|i| format!("c{i:04}")).collect();
    let h = performance_heatmap(&labels, &datasets, &scores);
    std::fs::create_dir_all(&a.out_dir)?;
    let mut written = Vec::new();
    for (name, m) in [("accuracy", &h.accuracy), ("regret", &h.regret)] {
        let path = a.out_dir.join(format!("heatmap_{name}.csv"));
        std::fs::write(&path, m.to_csv())?;
        written.push(path.display().to_string());
        if a.svg {
            let mut svg = m.to_svg(&format!("{name} at budget {budget}"));
            if !a.reproducible {
                let stamp = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs());
                svg.insert_str(0, &format!("<!-- generated at unix time {stamp} -->\n"));
            }
            let path = a.out_dir.join(format!("heatmap_{name}.svg"));
            std::fs::write(&path, svg)?;
            written.push(path.display().to_string());
        }
    }
    Ok(json!({
        "command": "analyze heatmap",
        "budget": budget,
        "configs": configs.len(),
        "datasets": datasets,
        "unique_best": h.unique_best,
        "files": written,
    }))
}

fn curve(a: CurveArgs) -> Result<Value> {
    let text = std::fs::read_to_string(&a.matrix).with_context(|| format!("reading {}", a.matrix.display()))?;
    let (_, _, scores) = read_matrix_csv(&text)?;
    let kind = if a.absolute_regret {
        RegretKind::Absolute
    } else {
        RegretKind::Relative
    };
    let regrets = relative_regret(&scores, kind);
    let curve = portfolio_size_curve(&regrets, a.max_size.unwrap_or(scores.len()))?;
    let mut csv = String::from("size,mean_regret\n");
    for (n, r) in &curve {
        csv.push_str(&format!("{n},{r:?}\n"));
    }
    std::fs::write(&a.out, csv)?;
    Ok(json!({"command": "analyze portfolio-curve", "out": a.out.display().to_string(), "curve": curve}))
}
