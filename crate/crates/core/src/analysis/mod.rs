//! Study instruments: rank correlation across budgets, performance heatmaps
//! and hyperparameter importance.

mod forest;
mod importance;

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use forest::{fit_forest, Forest, ForestSettings, LeafBox, Node, Tree};
pub use importance::{
    encoding_bounds, fanova_first_order, fanova_report, lpi, tree_first_order, ImportanceMethod, ImportanceReport,
};

use crate::configspace::{Configuration, SpaceError};
use crate::executor::ReplayBundle;
use crate::portfolio::{relative_regret, RegretKind};
use importance::csv_field;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("too few samples: got {got}, need {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("correlation is undefined for constant input")]
    ConstantInput,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("grid size must be at least 3, got {0}")]
    GridTooSmall(usize),
    #[error("budget {0} is not available in the bundle")]
    MissingBudget(u64),
    #[error("no configurations are shared by all bundles")]
    NoSharedConfigurations,
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Fractional ranks starting at 1; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFewSamples { got: x.len(), need: 2 });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Which curve family each side of a budget pair is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationMode {
    /// Both budgets read off the run scheduled for the largest budget.
    NonAdaptive,
    /// Each budget read off the run scheduled for exactly that budget.
    Adaptive,
    /// First budget from its own schedule, second from the full schedule.
    Cross,
}

impl CorrelationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NonAdaptive => "non-adaptive",
            Self::Adaptive => "adaptive",
            Self::Cross => "cross",
        }
    }
}

impl std::str::FromStr for CorrelationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "non-adaptive" => Ok(Self::NonAdaptive),
            "adaptive" => Ok(Self::Adaptive),
            "cross" => Ok(Self::Cross),
            _ => Err(format!("unknown correlation mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub budget_a: u64,
    pub budget_b: u64,
    pub mode: CorrelationMode,
    pub per_dataset: Vec<(String, f64)>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single dataset.
    pub std: f64,
}

impl CorrelationReport {
    /// Long-format rows `dataset,budget_a,budget_b,mode,rho`.
    pub fn csv_rows(&self) -> Vec<String> {
        self.per_dataset
            .iter()
            .map(|(d, r)| {
                format!(
                    "{},{},{},{},{r:?}",
                    csv_field(d),
                    self.budget_a,
                    self.budget_b,
                    self.mode.as_str()
                )
            })
            .collect()
    }
}

pub const MIN_SHARED_CONFIGS: usize = 10;

/// Seed-averaged validation loss of every configuration of a bundle at
/// `budget`, read according to `adaptive`.
fn bundle_losses(bundle: &ReplayBundle, budget: u64, adaptive: bool) -> Result<Vec<f64>, AnalysisError> {
    (0..bundle.configs().len())
        .map(|slot| {
            let losses: Option<Vec<f64>> = bundle
                .records_of(slot)
                .map(|r| {
                    if adaptive && budget != bundle.b_max {
                        r.adaptive_val_loss(budget)
                    } else {
                        r.val_loss(budget)
                    }
                })
                .collect();
            let losses = losses.ok_or(AnalysisError::MissingBudget(budget))?;
            Ok(losses.iter().sum::<f64>() / losses.len() as f64)
        })
        .collect()
}

/// Spearman correlation between losses at two budgets over each bundle's
/// configurations, with the mean and spread across bundles.
pub fn budget_correlation(
    bundles: &[&ReplayBundle],
    budget_a: u64,
    budget_b: u64,
    mode: CorrelationMode,
) -> Result<CorrelationReport, AnalysisError> {
    let (adaptive_a, adaptive_b) = match mode {
        CorrelationMode::NonAdaptive => (false, false),
        CorrelationMode::Adaptive => (true, true),
        CorrelationMode::Cross => (true, false),
    };
    let mut per_dataset = Vec::with_capacity(bundles.len());
    for b in bundles {
        if b.configs().len() < MIN_SHARED_CONFIGS {
            return Err(AnalysisError::TooFewSamples {
                got: b.configs().len(),
                need: MIN_SHARED_CONFIGS,
            });
        }
        let x = bundle_losses(b, budget_a, adaptive_a)?;
        let y = bundle_losses(b, budget_b, adaptive_b)?;
        per_dataset.push((b.dataset_name.clone(), spearman(&x, &y)?));
    }
    if per_dataset.is_empty() {
        return Err(AnalysisError::TooFewSamples { got: 0, need: 1 });
    }
    let n = per_dataset.len() as f64;
    let mean = per_dataset.iter().map(|(_, r)| r).sum::<f64>() / n;
    let std = if per_dataset.len() > 1 {
        (per_dataset.iter().map(|(_, r)| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(CorrelationReport {
        budget_a,
        budget_b,
        mode,
        per_dataset,
        mean,
        std,
    })
}

/// Configurations, dataset names and accuracies (configuration-major).
pub type SharedMatrix = (Vec<Configuration>, Vec<String>, Vec<Vec<f64>>);

/// Configurations recorded in every bundle (in the first bundle's order) and
/// their seed-averaged validation accuracy at `budget`, one column per bundle.
pub fn shared_accuracy_matrix(bundles: &[&ReplayBundle], budget: u64) -> Result<SharedMatrix, AnalysisError> {
    let first = bundles.first().ok_or(AnalysisError::NoSharedConfigurations)?;
    let mut configs = Vec::new();
    let mut rows = Vec::new();
    'configs: for c in first.configs() {
        let mut row = Vec::with_capacity(bundles.len());
        for b in bundles {
            let Some(slot) = b.config_index(c) else {
                continue 'configs;
            };
            let loss = b
                .mean_val_loss(slot, budget)
                .ok_or(AnalysisError::MissingBudget(budget))?;
            row.push(1.0 - loss);
        }
        configs.push(c.clone());
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(AnalysisError::NoSharedConfigurations);
    }
    let datasets = bundles.iter().map(|b| b.dataset_name.clone()).collect();
    Ok((configs, datasets, rows))
}

/// A matrix with rows and columns reordered by their means.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SortedMatrix {
    fn new(row_labels: &[String], col_labels: &[String], values: &[Vec<f64>], descending: bool) -> Self {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let key = |m: f64| if descending { -m } else { m };
        let mut rows: Vec<usize> = (0..values.len()).collect();
        rows.sort_by(|&a, &b| key(mean(&values[a])).total_cmp(&key(mean(&values[b]))).then(a.cmp(&b)));
        let n_cols = values.first().map_or(0, Vec::len);
        let col_means: Vec<f64> = (0..n_cols)
            .map(|j| values.iter().map(|r| r[j]).sum::<f64>() / values.len() as f64)
            .collect();
        let mut cols: Vec<usize> = (0..n_cols).collect();
        cols.sort_by(|&a, &b| key(col_means[a]).total_cmp(&key(col_means[b])).then(a.cmp(&b)));
        Self {
            row_labels: rows.iter().map(|&i| row_labels[i].clone()).collect(),
            col_labels: cols.iter().map(|&j| col_labels[j].clone()).collect(),
            values: rows
                .iter()
                .map(|&i| cols.iter().map(|&j| values[i][j]).collect())
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("config");
        for c in &self.col_labels {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            out.push_str(&csv_field(label));
            for v in row {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    /// Grayscale heatmap, darker for larger values.
    pub fn to_svg(&self, title: &str) -> String {
        let cell = 6.0;
        let (n_rows, n_cols) = (self.values.len(), self.col_labels.len());
        let lo = self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (left, top) = (10.0, 24.0);
        let width = left * 2.0 + cell * n_cols as f64;
        let height = top + 10.0 + cell * n_rows as f64;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\n<text x=\"{left}\" y=\"16\" font-size=\"12\">{}</text>\n",
            title.replace('&', "&amp;").replace('<', "&lt;")
        );
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let shade = (255.0 * (1.0 - (v - lo) / span)).round() as u8;
                let _ = writeln!(
                    svg,
                    "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},{shade})\"/>",
                    left + cell * j as f64,
                    top + cell * i as f64
                );
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Accuracies, rows and columns by descending mean.
    pub accuracy: SortedMatrix,
    /// Regrets, rows and columns by ascending mean.
    pub regret: SortedMatrix,
    /// Number of distinct configurations that are best on some dataset.
    pub unique_best: usize,
}

/// Accuracy and regret views of a configuration × dataset matrix.
pub fn performance_heatmap(row_labels: &[String], col_labels: &[String], scores: &[Vec<f64>]) -> Heatmap {
    let regrets = relative_regret(scores, RegretKind::Relative);
    let n_cols = col_labels.len();
    let mut best: Vec<usize> = (0..n_cols)
        .map(|j| {
            let mut b = 0;
            for i in 1..scores.len() {
                if scores[i][j] > scores[b][j] {
                    b = i;
                }
            }
            b
        })
        .collect();
    best.sort_unstable();
    best.dedup();
    Heatmap {
        accuracy: SortedMatrix::new(row_labels, col_labels, scores, true),
        regret: SortedMatrix::new(row_labels, col_labels, &regrets, false),
        unique_best: best.len(),
    }
}

/// Loss pairs for configurations evaluated at both budgets of a history,
/// keyed by configuration.
pub fn paired_losses(
    records: &[crate::optimizer::EvaluationRecord],
    budget_a: u64,
    budget_b: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut at_a: HashMap<String, f64> = HashMap::new();
    for r in records.iter().filter(|r| r.budget == budget_a && !r.crashed) {
        at_a.entry(r.configuration.key()).or_insert(r.loss);
    }
    let mut seen = std::collections::HashSet::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in records.iter().filter(|r| r.budget == budget_b && !r.crashed) {
        let key = r.configuration.key();
        if let Some(a) = at_a.get(&key) {
            if seen.insert(key) {
                xs.push(*a);
                ys.push(r.loss);
            }
        }
    }
    (xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::SyntheticCurve;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap() - 0.6).abs() < 1e-12);
        assert!(matches!(
            spearman(&[1.0, 1.0], &[1.0, 2.0]),
            Err(AnalysisError::ConstantInput)
        ));
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn synthetic_budgets_correlate() {
        let obj = SyntheticCurve::wells(0.0);
        let space = obj.configuration_space();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let configs: Vec<_> = (0..500).map(|_| space.sample_uniform(&mut rng)).collect();
        let a: Vec<f64> = configs.iter().map(|c| obj.loss_at(c, 12, 0).unwrap()).collect();
        let b: Vec<f64> = configs.iter().map(|c| obj.loss_at(c, 50, 0).unwrap()).collect();
        assert!(spearman(&a, &b).unwrap() >= 0.8);
    }

    #[test]
    fn bundle_correlation_modes() {
        let obj = SyntheticCurve::task(1, 0.01);
        let space = obj.configuration_space().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let configs: Vec<_> = (0..40).map(|_| space.sample_uniform(&mut rng)).collect();
        let doc = obj.replay_document(&configs, &[0], 50, &[12, 25], "s.json").unwrap();
        let bundle = ReplayBundle::from_document(doc, std::sync::Arc::new(space), "mem").unwrap();
        for mode in [
            CorrelationMode::NonAdaptive,
            CorrelationMode::Adaptive,
            CorrelationMode::Cross,
        ] {
            let same = budget_correlation(&[&bundle], 50, 50, mode).unwrap();
            assert!((same.mean - 1.0).abs() < 1e-12);
            let r = budget_correlation(&[&bundle, &bundle], 12, 50, mode).unwrap();
            assert!(r.per_dataset.iter().all(|(_, x)| (-1.0..=1.0).contains(x)));
            assert_eq!(r.std, 0.0);
        }
        assert!(budget_correlation(&[&bundle], 13, 50, CorrelationMode::Adaptive).is_err());
    }

    #[test]
    fn heatmap_sorting() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let cols = vec!["d1".to_string(), "d2".to_string()];
        let h = performance_heatmap(&labels, &cols, &[vec![0.2, 0.4], vec![0.9, 0.5]]);
        assert_eq!(h.accuracy.row_labels, vec!["b", "a"]);
        assert_eq!(h.accuracy.col_labels, vec!["d1", "d2"]);
        for j in 0..2 {
            let col_min = h.regret.values.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            assert_eq!(col_min, 0.0);
        }
        assert_eq!(h.unique_best, 1);
        assert!(h.accuracy.to_svg("t").starts_with("<svg"));
    }

    proptest! {
        #[test]
        fn spearman_is_rank_invariant(
            pairs in proptest::collection::vec((0u8..20, 0u8..20), 3..40),
            shift in -5.0f64..5.0,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            if let Ok(r) = spearman(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let tx: Vec<f64> = x.iter().map(|v| (v * 0.3).exp() + shift).collect();
                let ty: Vec<f64> = y.iter().map(|v| v.powi(3) - shift).collect();
                prop_assert!((spearman(&tx, &ty).unwrap() - r).abs() < 1e-12);
            }
        }
    }
}
