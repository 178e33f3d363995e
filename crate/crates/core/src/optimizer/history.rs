//! Evaluation records, the append-only run history and the run directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::OptimizerError;
use crate::configspace::Configuration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Random,
    Model,
    Portfolio,
}

/// One finished evaluation. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub job_id: u64,
    pub config_id: u64,
    pub configuration: Configuration,
    pub budget: u64,
    pub seed: u64,
    pub loss: f64,
    pub crashed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_curve: Option<Vec<f64>>,
    pub wall_time: f64,
    pub origin: Origin,
    /// Hyperband iteration (one bracket each) and rung inside it.
    pub iteration: u64,
    pub bracket: usize,
    pub rung: usize,
}

/// A point of the incumbent trajectory at the largest budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub wall_time: f64,
    pub n_evals: usize,
    pub budget: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunHistory {
    records: Vec<EvaluationRecord>,
    by_budget: BTreeMap<u64, Vec<usize>>,
    trajectory: Vec<TrajectoryPoint>,
    elapsed: f64,
    incumbent_budget: u64,
}

impl RunHistory {
    /// Empty history tracking its incumbent at `incumbent_budget`.
    pub fn new(incumbent_budget: u64) -> Self {
        Self {
            incumbent_budget,
            ..Self::default()
        }
    }

    pub fn records(&self) -> &[EvaluationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records at one budget, in insertion order.
    pub fn at_budget(&self, budget: u64) -> impl Iterator<Item = &EvaluationRecord> {
        self.by_budget
            .get(&budget)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    pub fn budgets(&self) -> impl Iterator<Item = u64> + '_ {
        self.by_budget.keys().copied()
    }

    pub fn trajectory(&self) -> &[TrajectoryPoint] {
        &self.trajectory
    }

    /// Sum of evaluation times so far.
    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn push(&mut self, record: EvaluationRecord) -> Option<TrajectoryPoint> {
        self.elapsed += record.wall_time;
        let index = self.records.len();
        self.by_budget.entry(record.budget).or_default().push(index);
        let improves = record.budget == self.incumbent_budget
            && !record.crashed
            && self.trajectory.last().is_none_or(|p| record.loss < p.loss);
        self.records.push(record);
        if improves {
            let point = TrajectoryPoint {
                wall_time: self.elapsed,
                n_evals: self.records.len(),
                budget: self.incumbent_budget,
                loss: self.records[index].loss,
            };
            self.trajectory.push(point);
            return Some(point);
        }
        None
    }

    /// Reads a runhistory file; a torn final line is dropped.
    pub fn read_records(path: &Path) -> Result<Vec<EvaluationRecord>, OptimizerError> {
        let text = std::fs::read_to_string(path).map_err(|e| OptimizerError::io(path, e))?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let mut out = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            match serde_json::from_str(line) {
                Ok(r) => out.push(r),
                Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
                Err(e) => return Err(OptimizerError::History(format!("{}:{}: {e}", path.display(), i + 1))),
            }
        }
        Ok(out)
    }
}

/// Lowest-loss finished record at `budget`; ties go to the earliest.
pub fn incumbent(history: &RunHistory, budget: u64) -> Result<(Configuration, f64), OptimizerError> {
    let mut best: Option<&EvaluationRecord> = None;
    for r in history.at_budget(budget).filter(|r| !r.crashed) {
        if best.is_none_or(|b| r.loss < b.loss) {
            best = Some(r);
        }
    }
    best.map(|r| (r.configuration.clone(), r.loss))
        .ok_or(OptimizerError::NoRecordsAtBudget(budget))
}

pub const SPACE_FILE: &str = "space.json";
pub const HISTORY_FILE: &str = "runhistory.jsonl";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const META_FILE: &str = "meta.json";
pub const PREDICTIONS_DIR: &str = "predictions";

/// Writer for the on-disk run layout. Every record is flushed as soon as it
/// is appended.
pub struct RunDirectory {
    root: PathBuf,
    history: BufWriter<File>,
    trajectory: BufWriter<File>,
}

impl RunDirectory {
    pub fn create(root: &Path, space_document: &str, meta: &serde_json::Value) -> Result<Self, OptimizerError> {
        std::fs::create_dir_all(root).map_err(|e| OptimizerError::io(root, e))?;
        let write = |name: &str, text: &str| {
            let path = root.join(name);
            std::fs::write(&path, text).map_err(|e| OptimizerError::io(&path, e))
        };
        write(SPACE_FILE, space_document)?;
        let mut meta_text = serde_json::to_string_pretty(meta).expect("meta serializes");
        meta_text.push('\n');
        write(META_FILE, &meta_text)?;
        let open = |name: &str| {
            let path = root.join(name);
            File::create(&path)
                .map(BufWriter::new)
                .map_err(|e| OptimizerError::io(&path, e))
        };
        let history = open(HISTORY_FILE)?;
        let mut trajectory = open(TRAJECTORY_FILE)?;
        writeln!(trajectory, "wall_time_s,n_evals,budget,incumbent_loss").map_err(|e| OptimizerError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            history,
            trajectory,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn append(&mut self, record: &EvaluationRecord, point: Option<TrajectoryPoint>) -> Result<(), OptimizerError> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.history, "{line}").map_err(|e| OptimizerError::io(&self.root, e))?;
        self.history.flush().map_err(|e| OptimizerError::io(&self.root, e))?;
        if let Some(p) = point {
            writeln!(
                self.trajectory,
                "{:?},{},{},{:?}",
                p.wall_time, p.n_evals, p.budget, p.loss
            )
            .map_err(|e| OptimizerError::io(&self.root, e))?;
            self.trajectory.flush().map_err(|e| OptimizerError::io(&self.root, e))?;
        }
        Ok(())
    }
}
