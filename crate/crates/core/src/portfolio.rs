//! Cross-dataset performance matrices and greedy warmstart portfolios.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::configspace::Configuration;
use crate::executor::{Executor, Job, JobStatus, Objective};
use crate::optimizer::{incumbent, BudgetLadder, RunHistory, HISTORY_FILE, META_FILE};

pub const PORTFOLIO_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PortfolioError {
    #[error("portfolio size must be at least 1")]
    ZeroSize,
    #[error("portfolio size {size} exceeds the {candidates} candidates")]
    TooLarge { size: usize, candidates: usize },
    #[error("performance matrix: {0}")]
    Matrix(String),
    #[error("run {path}: {message}")]
    Run { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn io(path: &Path, source: std::io::Error) -> PortfolioError {
    PortfolioError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegretKind {
    /// `(best - a) / best`, zero when `best = 0`.
    #[default]
    Relative,
    /// `best - a`.
    Absolute,
}

/// Validation accuracies of candidates (rows) on datasets (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMatrix {
    pub candidates: Vec<Configuration>,
    /// Where each candidate came from, e.g. a run directory name.
    pub sources: Vec<String>,
    pub datasets: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    /// Cells imputed with accuracy 0 after a crash.
    pub crashed: Vec<Vec<bool>>,
}

impl PerformanceMatrix {
    pub fn new(
        candidates: Vec<Configuration>,
        sources: Vec<String>,
        datasets: Vec<String>,
        scores: Vec<Vec<f64>>,
    ) -> Result<Self, PortfolioError> {
        let crashed = scores.iter().map(|r| vec![false; r.len()]).collect();
        let m = Self {
            candidates,
            sources,
            datasets,
            scores,
            crashed,
        };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<(), PortfolioError> {
        let bad = |m: &str| Err(PortfolioError::Matrix(m.to_string()));
        if self.scores.is_empty() || self.datasets.is_empty() {
            return bad("needs at least one candidate and one dataset");
        }
        if self.candidates.len() != self.scores.len() || self.sources.len() != self.scores.len() {
            return bad("candidate, source and row counts differ");
        }
        if self.scores.iter().any(|r| r.len() != self.datasets.len()) {
            return bad("row length differs from the dataset count");
        }
        if self.scores.iter().flatten().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("accuracy outside [0, 1]");
        }
        Ok(())
    }

    pub fn n_candidates(&self) -> usize {
        self.scores.len()
    }

    /// Header `candidate,<dataset ids>`, one row per candidate.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("candidate");
        for d in &self.datasets {
            out.push(',');
            out.push_str(d);
        }
        out.push('\n');
        for (source, row) in self.sources.iter().zip(&self.scores) {
            out.push_str(source);
            for a in row {
                out.push_str(&format!(",{a:?}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Dataset ids, candidate labels and scores of a matrix file.
pub type MatrixTable = (Vec<String>, Vec<String>, Vec<Vec<f64>>);

/// Parses the score table of [`PerformanceMatrix::to_csv`].
pub fn read_matrix_csv(text: &str) -> Result<MatrixTable, PortfolioError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| PortfolioError::Matrix(e.to_string()))?
        .clone();
    let datasets: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| PortfolioError::Matrix(e.to_string()))?;
        labels.push(record.get(0).unwrap_or_default().to_string());
        let row = record
            .iter()
            .skip(1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| PortfolioError::Matrix(format!("`{v}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != datasets.len() {
            return Err(PortfolioError::Matrix("ragged row".into()));
        }
        rows.push(row);
    }
    if rows.is_empty() || datasets.is_empty() {
        return Err(PortfolioError::Matrix("empty matrix".into()));
    }
    Ok((datasets, labels, rows))
}

/// Per-cell regret against the best candidate on each dataset.
pub fn relative_regret(scores: &[Vec<f64>], kind: RegretKind) -> Vec<Vec<f64>> {
    let n_datasets = scores.first().map_or(0, Vec::len);
    let best: Vec<f64> = (0..n_datasets)
        .map(|d| scores.iter().map(|r| r[d]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    scores
        .iter()
        .map(|row| {
            row.iter()
                .zip(&best)
                .map(|(a, b)| match kind {
                    RegretKind::Absolute => b - a,
                    RegretKind::Relative if *b == 0.0 => 0.0,
                    RegretKind::Relative => (b - a) / b,
                })
                .collect()
        })
        .collect()
}

/// Greedy portfolio over a regret matrix: each step adds the unused
/// candidate minimizing the summed per-dataset minimum regret of the
/// enlarged portfolio; ties go to the lower index. Returns the chosen indices
/// and the mean minimum regret after each step.
pub fn greedy_build(regrets: &[Vec<f64>], size: usize) -> Result<(Vec<usize>, Vec<f64>), PortfolioError> {
    if size == 0 {
        return Err(PortfolioError::ZeroSize);
    }
    if size > regrets.len() {
        return Err(PortfolioError::TooLarge {
            size,
            candidates: regrets.len(),
        });
    }
    let n_datasets = regrets[0].len().max(1);
    let mut current = vec![f64::INFINITY; regrets[0].len()];
    let mut used = vec![false; regrets.len()];
    let mut chosen = Vec::with_capacity(size);
    let mut curve = Vec::with_capacity(size);
    for _ in 0..size {
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in regrets.iter().enumerate().filter(|(i, _)| !used[*i]) {
            let total: f64 = current.iter().zip(row).map(|(c, r)| c.min(*r)).sum();
            if best.is_none_or(|(_, b)| total < b) {
                best = Some((i, total));
            }
        }
        let (pick, total) = best.expect("size <= candidates");
        used[pick] = true;
        for (c, r) in current.iter_mut().zip(&regrets[pick]) {
            *c = c.min(*r);
        }
        chosen.push(pick);
        curve.push(total / n_datasets as f64);
    }
    Ok((chosen, curve))
}

/// `(size, mean minimum regret)` along the greedy trajectory.
pub fn portfolio_size_curve(regrets: &[Vec<f64>], max_size: usize) -> Result<Vec<(usize, f64)>, PortfolioError> {
    let (_, curve) = greedy_build(regrets, max_size.min(regrets.len()))?;
    Ok(curve.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioEntry {
    pub config: Configuration,
    pub source_run: String,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Construction {
    pub regret_curve: Vec<f64>,
    pub dataset_ids: Vec<String>,
    #[serde(default)]
    pub regret: RegretKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub version: u32,
    pub space: String,
    pub entries: Vec<PortfolioEntry>,
    pub construction: Construction,
}

impl Portfolio {
    /// Greedy portfolio of `size` entries built from `matrix`.
    pub fn build(
        matrix: &PerformanceMatrix,
        size: usize,
        kind: RegretKind,
        space: impl Into<String>,
    ) -> Result<Self, PortfolioError> {
        let regrets = relative_regret(&matrix.scores, kind);
        let (chosen, curve) = greedy_build(&regrets, size)?;
        Ok(Self {
            version: PORTFOLIO_VERSION,
            space: space.into(),
            entries: chosen
                .iter()
                .enumerate()
                .map(|(rank, &i)| PortfolioEntry {
                    config: matrix.candidates[i].clone(),
                    source_run: matrix.sources[i].clone(),
                    rank,
                })
                .collect(),
            construction: Construction {
                regret_curve: curve,
                dataset_ids: matrix.datasets.clone(),
                regret: kind,
            },
        })
    }

    pub fn configurations(&self) -> Vec<Configuration> {
        self.entries.iter().map(|e| e.config.clone()).collect()
    }

    pub fn load(path: &Path) -> Result<Self, PortfolioError> {
        let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        serde_json::from_str(&text).map_err(|source| PortfolioError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PortfolioError> {
        let mut text = serde_json::to_string_pretty(self).expect("portfolio serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| io(path, e))
    }
}

/// Incumbent at the largest budget of a run directory.
pub fn run_incumbent(dir: &Path) -> Result<(Configuration, f64), PortfolioError> {
    let run_err = |message: String| PortfolioError::Run {
        path: dir.display().to_string(),
        message,
    };
    let meta_path = dir.join(META_FILE);
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| io(&meta_path, e))?;
    let meta: serde_json::Value = serde_json::from_str(&meta_text).map_err(|source| PortfolioError::Json {
        path: meta_path.display().to_string(),
        source,
    })?;
    let ladder: BudgetLadder =
        serde_json::from_value(meta["ladder"].clone()).map_err(|e| run_err(format!("meta ladder: {e}")))?;
    let records = RunHistory::read_records(&dir.join(HISTORY_FILE)).map_err(|e| run_err(e.to_string()))?;
    let mut history = RunHistory::new(ladder.b_max);
    for r in records {
        history.push(r);
    }
    incumbent(&history, ladder.b_max).map_err(|e| run_err(e.to_string()))
}

/// Evaluates every candidate on every dataset objective at `b_max`. Crashed
/// cells get accuracy 0 and are flagged.
pub fn build_matrix(
    candidates: &[(String, Configuration)],
    objectives: &[(String, Arc<dyn Objective>)],
    b_max: u64,
    workers: usize,
) -> Result<PerformanceMatrix, PortfolioError> {
    if candidates.is_empty() || objectives.is_empty() {
        return Err(PortfolioError::Matrix(
            "needs at least one candidate and one dataset".into(),
        ));
    }
    let mut scores = vec![vec![0.0; objectives.len()]; candidates.len()];
    let mut crashed = vec![vec![false; objectives.len()]; candidates.len()];
    for (d, (_, objective)) in objectives.iter().enumerate() {
        let mut executor = Executor::new(objective.clone(), workers);
        let jobs = candidates
            .iter()
            .enumerate()
            .map(|(i, (_, c))| Job {
                job_id: i as u64,
                config: c.clone(),
                budget: b_max,
                seed: 0,
            })
            .collect();
        for r in executor.run_batch(jobs) {
            let i = r.job_id as usize;
            if r.status == JobStatus::Crashed {
                crashed[i][d] = true;
            } else {
                scores[i][d] = (1.0 - r.loss).clamp(0.0, 1.0);
            }
        }
    }
    let mut m = PerformanceMatrix::new(
        candidates.iter().map(|(_, c)| c.clone()).collect(),
        candidates.iter().map(|(s, _)| s.clone()).collect(),
        objectives.iter().map(|(d, _)| d.clone()).collect(),
        scores,
    )?;
    m.crashed = crashed;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn regret_examples() {
        let r = relative_regret(&[vec![0.8], vec![0.6], vec![0.8]], RegretKind::Relative);
        let expected = [0.0, 0.25, 0.0];
        assert!(r.iter().zip(expected).all(|(row, e)| (row[0] - e).abs() < 1e-12));
        let r = relative_regret(&[vec![0.0], vec![0.0]], RegretKind::Relative);
        assert_eq!(r, vec![vec![0.0], vec![0.0]]);
        let r = relative_regret(&[vec![0.8], vec![0.6]], RegretKind::Absolute);
        assert!((r[1][0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn toy_portfolio() {
        let regrets = vec![vec![0.0, 0.5], vec![0.5, 0.0], vec![0.2, 0.2]];
        let (chosen, _) = greedy_build(&regrets, 2).unwrap();
        assert_eq!(chosen, vec![2, 0]);
        let curve = portfolio_size_curve(&regrets, 3).unwrap();
        assert_eq!(curve[0], (1, 0.2));
        assert!((curve[1].1 - 0.1).abs() < 1e-12);
        // the third pick covers the second dataset too
        assert_eq!(curve[2], (3, 0.0));
        assert!(greedy_build(&regrets, 0).is_err());
        assert!(greedy_build(&regrets, 4).is_err());
        assert_eq!(greedy_build(&[vec![0.3]], 1).unwrap().0, vec![0]);
    }

    #[test]
    fn csv_round_trip() {
        let m = PerformanceMatrix::new(
            vec![Configuration::default(); 2],
            vec!["r0".into(), "r1".into()],
            vec!["a".into(), "b".into()],
            vec![vec![0.5, 0.25], vec![1.0, 0.1]],
        )
        .unwrap();
        let (d, l, s) = read_matrix_csv(&m.to_csv()).unwrap();
        assert_eq!(d, m.datasets);
        assert_eq!(l, m.sources);
        assert_eq!(s, m.scores);
    }

    fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..7, 1usize..5)
            .prop_flat_map(|(c, d)| proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, d), c))
    }

    proptest! {
        #[test]
        fn curve_is_non_increasing_and_beats_singles(scores in matrix()) {
            let regrets = relative_regret(&scores, RegretKind::Relative);
            let curve = portfolio_size_curve(&regrets, regrets.len()).unwrap();
            prop_assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
            let n_d = regrets[0].len() as f64;
            let best_single = regrets
                .iter()
                .map(|r| r.iter().sum::<f64>() / n_d)
                .fold(f64::INFINITY, f64::min);
            prop_assert!((curve[0].1 - best_single).abs() < 1e-12);
        }

        #[test]
        fn column_permutation_keeps_the_set(scores in matrix(), shift in 0usize..4) {
            let regrets = relative_regret(&scores, RegretKind::Relative);
            let d = regrets[0].len();
            let rotated: Vec<Vec<f64>> = regrets
                .iter()
                .map(|r| (0..d).map(|j| r[(j + shift) % d]).collect())
                .collect();
            let size = regrets.len().min(3);
            let mut a = greedy_build(&regrets, size).unwrap().0;
            let mut b = greedy_build(&rotated, size).unwrap().0;
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }
}
