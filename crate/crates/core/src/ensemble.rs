//! Post-hoc ensemble selection over stored validation predictions.
//!
//! Models are added greedily and with replacement to a uniformly averaged
//! ensemble, each round picking the model that maximizes the selection
//! metric of the augmented multiset. Repeated picks turn into weights.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("prediction store is empty")]
    EmptyStore,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("prediction matrix is invalid: {0}")]
    InvalidMatrix(String),
    #[error("member `{0}` has no stored predictions")]
    MissingMember(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("label {label} at row {row} is out of range for {n_classes} classes")]
    LabelOutOfRange { row: usize, label: usize, n_classes: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed prediction data in {path}: {message}")]
    Format { path: String, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> EnsembleError {
    EnsembleError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Class-probability matrix (instances × classes), stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

impl PredictionMatrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self, EnsembleError> {
        if n_cols == 0 || data.len() != n_rows * n_cols {
            return Err(EnsembleError::InvalidMatrix(format!(
                "{} values for a {n_rows}x{n_cols} matrix",
                data.len()
            )));
        }
        let m = Self { n_rows, n_cols, data };
        for r in 0..n_rows {
            let row = m.row(r);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(EnsembleError::InvalidMatrix(format!("row {r} has invalid entries")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(EnsembleError::InvalidMatrix(format!("row {r} sums to {s}")));
            }
        }
        Ok(m)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Index of the largest entry in each row; ties go to the lower class.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n_rows).map(|r| argmax(self.row(r))).collect()
    }

    pub fn score(&self, labels: &[usize], metric: Metric) -> f64 {
        metric.score(&self.argmax(), labels, self.n_cols)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.n_rows {
            let row: Vec<String> = self.row(r).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, EnsembleError> {
        let mut data = Vec::new();
        let mut n_rows = 0;
        let mut n_cols = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| EnsembleError::InvalidMatrix(e.to_string()))?;
            if *n_cols.get_or_insert(row.len()) != row.len() {
                return Err(EnsembleError::InvalidMatrix("ragged rows".into()));
            }
            data.extend(row);
            n_rows += 1;
        }
        Self::new(n_rows, n_cols.unwrap_or(0), data)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
    BalancedAccuracy,
}

impl Metric {
    pub fn score(self, predicted: &[usize], labels: &[usize], n_classes: usize) -> f64 {
        match self {
            Metric::Accuracy => {
                let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
                hits as f64 / labels.len().max(1) as f64
            }
            Metric::BalancedAccuracy => {
                let mut support = vec![0usize; n_classes];
                let mut hits = vec![0usize; n_classes];
                for (p, l) in predicted.iter().zip(labels) {
                    support[*l] += 1;
                    if p == l {
                        hits[*l] += 1;
                    }
                }
                let present: Vec<usize> = (0..n_classes).filter(|&c| support[c] > 0).collect();
                let total: f64 = present.iter().map(|&c| hits[c] as f64 / support[c] as f64).sum();
                total / present.len().max(1) as f64
            }
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "balanced_accuracy" | "balanced-accuracy" => Ok(Metric::BalancedAccuracy),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionEntry {
    pub model_id: String,
    pub budget: u64,
    pub predictions: PredictionMatrix,
    pub val_loss: f64,
    /// Seconds since the start of the run at which the model finished.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionStore {
    pub entries: Vec<PredictionEntry>,
    pub true_labels: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    model_id: String,
    budget: u64,
    val_loss: f64,
    timestamp: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    true_labels: Vec<usize>,
    models: Vec<ManifestEntry>,
}

impl PredictionStore {
    pub fn new(true_labels: Vec<usize>) -> Self {
        Self {
            entries: Vec::new(),
            true_labels,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds an entry after checking its shape against the store.
    pub fn push(&mut self, entry: PredictionEntry) -> Result<(), EnsembleError> {
        let (rows, cols) = entry.predictions.shape();
        if rows != self.true_labels.len() {
            return Err(EnsembleError::ShapeMismatch {
                expected: (self.true_labels.len(), cols),
                got: (rows, cols),
            });
        }
        if let Some(first) = self.entries.first() {
            let expected = first.predictions.shape();
            if expected != (rows, cols) {
                return Err(EnsembleError::ShapeMismatch {
                    expected,
                    got: (rows, cols),
                });
            }
        }
        if let Some((row, &label)) = self.true_labels.iter().enumerate().find(|(_, l)| **l >= cols) {
            return Err(EnsembleError::LabelOutOfRange {
                row,
                label,
                n_classes: cols,
            });
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.entries.first().map_or(0, |e| e.predictions.shape().1)
    }

    pub fn find(&self, model_id: &str) -> Option<&PredictionEntry> {
        self.entries.iter().find(|e| e.model_id == model_id)
    }

    /// Writes `manifest.json` plus one CSV per model into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), EnsembleError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for entry in &self.entries {
            let path = dir.join(format!("{}.csv", entry.model_id));
            fs::write(&path, entry.predictions.to_csv()).map_err(|e| io_err(&path, e))?;
        }
        let manifest = Manifest {
            true_labels: self.true_labels.clone(),
            models: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    model_id: e.model_id.clone(),
                    budget: e.budget,
                    val_loss: e.val_loss,
                    timestamp: e.timestamp,
                })
                .collect(),
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).unwrap_or_default();
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, EnsembleError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| EnsembleError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut store = Self::new(manifest.true_labels);
        for m in manifest.models {
            let path = dir.join(format!("{}.csv", m.model_id));
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let predictions = PredictionMatrix::from_csv(&text)?;
            store.push(PredictionEntry {
                model_id: m.model_id,
                budget: m.budget,
                predictions,
                val_loss: m.val_loss,
                timestamp: m.timestamp,
            })?;
        }
        Ok(store)
    }
}

/// Keeps the `k` entries with the lowest validation loss, in store order.
pub fn topk_filter(store: &PredictionStore, k: usize) -> Result<PredictionStore, EnsembleError> {
    if store.is_empty() {
        return Err(EnsembleError::EmptyStore);
    }
    if k == 0 {
        return Err(EnsembleError::ZeroK);
    }
    let mut order: Vec<usize> = (0..store.len()).collect();
    order.sort_by(|&a, &b| store.entries[a].val_loss.total_cmp(&store.entries[b].val_loss));
    let mut keep: Vec<usize> = order.into_iter().take(k).collect();
    keep.sort_unstable();
    Ok(PredictionStore {
        entries: keep.into_iter().map(|i| store.entries[i].clone()).collect(),
        true_labels: store.true_labels.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub model_id: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEnsemble {
    pub members: Vec<Member>,
    pub size: usize,
    pub metric: Metric,
    pub score: f64,
}

impl WeightedEnsemble {
    pub fn weights(&self) -> Vec<(String, f64)> {
        self.members
            .iter()
            .map(|m| (m.model_id.clone(), m.count as f64 / self.size as f64))
            .collect()
    }
}

/// Full record of a greedy selection run.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Store index picked in each round.
    pub picks: Vec<usize>,
    /// Selection-metric score after each round.
    pub round_scores: Vec<f64>,
    /// The best-scoring prefix of the picks (latest prefix on ties).
    pub ensemble: WeightedEnsemble,
}

impl Selection {
    /// Running best score per round; non-decreasing by construction.
    pub fn incumbent_scores(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.round_scores
            .iter()
            .map(|s| {
                best = best.max(*s);
                best
            })
            .collect()
    }

    /// Multiset after the first `rounds` picks, as store index -> count.
    pub fn multiset(&self, rounds: usize) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &p in &self.picks[..rounds.min(self.picks.len())] {
            *counts.entry(p).or_insert(0) += 1;
        }
        counts
    }
}

fn argmax_of_sum(sum: &[f64], extra: &[f64], n_cols: usize) -> Vec<usize> {
    sum.chunks(n_cols)
        .zip(extra.chunks(n_cols))
        .map(|(s, e)| {
            let mut best = 0;
            let mut best_v = s[0] + e[0];
            for k in 1..n_cols {
                let v = s[k] + e[k];
                if v > best_v {
                    best = k;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

/// Greedy forward selection with replacement, starting from the empty set.
pub fn greedy_select(
    store: &PredictionStore,
    ensemble_size: usize,
    metric: Metric,
) -> Result<Selection, EnsembleError> {
    if store.is_empty() {
        return Err(EnsembleError::EmptyStore);
    }
    let n_cols = store.n_classes();
    let mut sum = vec![0.0; store.entries[0].predictions.data().len()];
    let mut picks = Vec::with_capacity(ensemble_size);
    let mut round_scores = Vec::with_capacity(ensemble_size);
    for _ in 0..ensemble_size.max(1) {
        let mut best: Option<(usize, f64)> = None;
        for (i, entry) in store.entries.iter().enumerate() {
            let predicted = argmax_of_sum(&sum, entry.predictions.data(), n_cols);
            let score = metric.score(&predicted, &store.true_labels, n_cols);
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let (pick, score) = best.expect("non-empty store");
        for (s, p) in sum.iter_mut().zip(store.entries[pick].predictions.data()) {
            *s += p;
        }
        picks.push(pick);
        round_scores.push(score);
    }
    let mut best_round = 0;
    for (r, s) in round_scores.iter().enumerate() {
        if *s >= round_scores[best_round] {
            best_round = r;
        }
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &p in &picks[..=best_round] {
        *counts.entry(p).or_insert(0) += 1;
    }
    let ensemble = WeightedEnsemble {
        members: counts
            .into_iter()
            .map(|(i, count)| Member {
                model_id: store.entries[i].model_id.clone(),
                count,
            })
            .collect(),
        size: best_round + 1,
        metric,
        score: round_scores[best_round],
    };
    Ok(Selection {
        picks,
        round_scores,
        ensemble,
    })
}

/// Weighted mean of the member prediction matrices.
pub fn ensemble_predict(
    ensemble: &WeightedEnsemble,
    store: &PredictionStore,
) -> Result<PredictionMatrix, EnsembleError> {
    let mut shape = None;
    let mut acc: Vec<f64> = Vec::new();
    for member in &ensemble.members {
        let entry = store
            .find(&member.model_id)
            .ok_or_else(|| EnsembleError::MissingMember(member.model_id.clone()))?;
        let s = entry.predictions.shape();
        match shape {
            None => {
                shape = Some(s);
                acc = vec![0.0; s.0 * s.1];
            }
            Some(expected) if expected != s => return Err(EnsembleError::ShapeMismatch { expected, got: s }),
            _ => {}
        }
        let w = member.count as f64 / ensemble.size as f64;
        for (a, p) in acc.iter_mut().zip(entry.predictions.data()) {
            *a += w * p;
        }
    }
    let (rows, cols) = shape.ok_or(EnsembleError::EmptyStore)?;
    PredictionMatrix::new(rows, cols, acc)
}

/// Ensemble score over time: at each evaluation time the selection is redone
/// on the models finished by then. With `interval` the times are multiples of
/// it (plus the last timestamp); otherwise every distinct stored timestamp.
pub fn ensemble_trajectory(
    store: &PredictionStore,
    interval: Option<f64>,
    k: usize,
    ensemble_size: usize,
    metric: Metric,
) -> Result<Vec<(f64, f64)>, EnsembleError> {
    if store.is_empty() {
        return Err(EnsembleError::EmptyStore);
    }
    let mut stamps: Vec<f64> = store.entries.iter().map(|e| e.timestamp).collect();
    stamps.sort_by(f64::total_cmp);
    stamps.dedup();
    let last = *stamps.last().expect("non-empty");
    let times = match interval {
        Some(dt) if dt > 0.0 => {
            let mut t = Vec::new();
            let mut x = dt;
            while x < last {
                if x >= stamps[0] {
                    t.push(x);
                }
                x += dt;
            }
            t.push(last);
            t
        }
        _ => stamps,
    };
    let mut out = Vec::with_capacity(times.len());
    for t in times {
        let finished = PredictionStore {
            entries: store.entries.iter().filter(|e| e.timestamp <= t).cloned().collect(),
            true_labels: store.true_labels.clone(),
        };
        let filtered = topk_filter(&finished, k)?;
        let selection = greedy_select(&filtered, ensemble_size, metric)?;
        out.push((t, selection.ensemble.score));
    }
    Ok(out)
}
