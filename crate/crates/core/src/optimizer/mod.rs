//! Hyperband over SuccessiveHalving brackets with model-based sampling.
//!
//! Brackets cycle `s = s_max..0`. Every rung is dispatched as a batch and its
//! results are committed in job order once the batch is complete, so a run is
//! reproducible from its seed regardless of the worker count.

mod history;
mod sampler;
mod schedule;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use history::{
    incumbent, EvaluationRecord, Origin, RunDirectory, RunHistory, TrajectoryPoint, HISTORY_FILE, META_FILE,
    PREDICTIONS_DIR, SPACE_FILE, TRAJECTORY_FILE,
};
pub use sampler::{Sampler, SamplerSettings};
pub use schedule::{
    bracket_plan, budget_ladder, promote, promotion_count, sh_promote, Bracket, BudgetLadder, RungEntry,
};

use crate::configspace::{Configuration, ConfigurationSpace, SpaceError};
use crate::ensemble::{EnsembleError, PredictionEntry, PredictionStore};
use crate::executor::{Executor, Job, JobResult, JobStatus, Objective};

#[derive(Debug, thiserror::Error)]
pub enum OptimizerError {
    #[error("invalid budget ladder: {0}")]
    InvalidLadder(String),
    #[error("bracket index {s} outside 0..={s_max}")]
    BracketOutOfRange { s: usize, s_max: usize },
    #[error("cannot promote from an empty rung")]
    EmptyRung,
    #[error("no finished records at budget {0}")]
    NoRecordsAtBudget(u64),
    #[error("run history: {0}")]
    History(String),
    #[error("resumed history diverges at job {0}")]
    ResumeMismatch(u64),
    #[error("at least one of max_iterations, max_evaluations or wall_clock must be set")]
    NoLimit,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

impl OptimizerError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Stopping rules; whichever triggers first ends the run. An iteration is
/// one bracket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub max_iterations: Option<u64>,
    pub max_evaluations: Option<usize>,
    /// Seconds; checked before each dispatch.
    pub wall_clock: Option<f64>,
    pub seed: u64,
    pub workers: usize,
}

impl Limits {
    pub fn iterations(n: u64, seed: u64) -> Self {
        Self {
            max_iterations: Some(n),
            max_evaluations: None,
            wall_clock: None,
            seed,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Iterations,
    Evaluations,
    WallClock,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub history: RunHistory,
    pub predictions: Option<PredictionStore>,
    pub stop: StopReason,
    pub run_id: String,
}

/// Everything a run needs besides the objective.
#[derive(Clone)]
pub struct Optimizer {
    pub space: Arc<ConfigurationSpace>,
    pub objective: Arc<dyn Objective>,
    /// Recorded in the run metadata only.
    pub objective_label: String,
    pub ladder: BudgetLadder,
    pub limits: Limits,
    pub settings: SamplerSettings,
    /// Warmstart configurations consumed during the first Hyperband iteration.
    pub portfolio: Vec<Configuration>,
    /// Records of an interrupted run with the same settings; they are replayed
    /// instead of re-evaluated.
    pub resume: Vec<EvaluationRecord>,
    pub run_dir: Option<PathBuf>,
}

fn config_seed(run_seed: u64, config_id: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(config_id.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

struct Slot {
    config_id: u64,
    config: Configuration,
    origin: Origin,
}

impl Optimizer {
    pub fn new(
        space: Arc<ConfigurationSpace>,
        objective: Arc<dyn Objective>,
        ladder: BudgetLadder,
        limits: Limits,
    ) -> Self {
        Self {
            space,
            objective,
            objective_label: String::new(),
            ladder,
            limits,
            settings: SamplerSettings::default(),
            portfolio: Vec::new(),
            resume: Vec::new(),
            run_dir: None,
        }
    }

    pub fn metadata(&self) -> serde_json::Value {
        let body = serde_json::json!({
            "space": self.space.name(),
            "objective": self.objective_label,
            "ladder": self.ladder,
            "limits": self.limits,
            "seed": self.limits.seed,
            "workers": self.limits.workers,
            "random_fraction": self.settings.random_fraction,
            "portfolio_size": self.portfolio.len(),
        });
        let digest = Sha256::digest(body.to_string().as_bytes());
        let mut meta = body;
        meta["run_id"] = serde_json::Value::String(hex::encode(&digest[..8]));
        meta
    }

    pub fn run(&self) -> Result<RunOutcome, OptimizerError> {
        let l = &self.limits;
        if l.max_iterations.is_none() && l.max_evaluations.is_none() && l.wall_clock.is_none() {
            return Err(OptimizerError::NoLimit);
        }
        let meta = self.metadata();
        let run_id = meta["run_id"].as_str().unwrap_or_default().to_string();
        let mut dir = match &self.run_dir {
            Some(root) => Some(RunDirectory::create(root, &self.space.to_document(), &meta)?),
            None => None,
        };
        let mut sampler = Sampler::new(self.space.clone(), self.settings, l.seed);
        sampler.set_portfolio(self.portfolio.clone());
        if let Some(candidates) = self.objective.candidates() {
            sampler.set_candidates(candidates)?;
        }
        let mut store = self.objective.true_labels().map(PredictionStore::new);
        let mut history = RunHistory::new(self.ladder.b_max);
        let cache: HashMap<u64, &EvaluationRecord> = self.resume.iter().map(|r| (r.job_id, r)).collect();
        let mut executor = Executor::new(self.objective.clone(), l.workers);
        let started = Instant::now();
        let wall_clock = l.wall_clock.map(Duration::from_secs_f64);
        let s_max = self.ladder.s_max();
        let mut next_job = 0u64;
        let mut next_config = 0u64;
        let mut iteration = 0u64;
        let stop = 'run: loop {
            if l.max_iterations.is_some_and(|m| iteration >= m) {
                break StopReason::Iterations;
            }
            if iteration as usize > s_max {
                sampler.close_portfolio();
            }
            let s = s_max - (iteration as usize % (s_max + 1));
            let mut bracket = bracket_plan(&self.ladder, s)?;
            if sampler.portfolio_remaining() > bracket.rung_sizes[0] && iteration == 0 {
                bracket = schedule::sized_bracket(&self.ladder, s, sampler.portfolio_remaining());
            }
            let mut slots = Vec::with_capacity(bracket.rung_sizes[0]);
            for _ in 0..bracket.rung_sizes[0] {
                let (config, origin) = sampler.next_sample()?;
                slots.push(Slot {
                    config_id: next_config,
                    config,
                    origin,
                });
                next_config += 1;
            }
            for (rung, &budget) in bracket.rung_budgets.iter().enumerate() {
                let mut jobs = Vec::with_capacity(slots.len());
                let mut halted = None;
                for slot in &slots {
                    if l.max_evaluations.is_some_and(|m| history.len() + jobs.len() >= m) {
                        halted = Some(StopReason::Evaluations);
                        break;
                    }
                    if wall_clock.is_some_and(|w| started.elapsed() >= w) {
                        halted = Some(StopReason::WallClock);
                        break;
                    }
                    let job = Job {
                        job_id: next_job,
                        config: slot.config.clone(),
                        budget,
                        seed: config_seed(l.seed, slot.config_id),
                    };
                    next_job += 1;
                    jobs.push((job, slot));
                }
                let mut results: HashMap<u64, JobResult> = HashMap::new();
                let mut submitted = 0;
                for (job, _) in &jobs {
                    match cache.get(&job.job_id) {
                        Some(r) if r.configuration == job.config && r.budget == job.budget => {
                            results.insert(job.job_id, cached_result(r));
                        }
                        Some(_) => return Err(OptimizerError::ResumeMismatch(job.job_id)),
                        None => {
                            executor.submit(job.clone());
                            submitted += 1;
                        }
                    }
                }
                for _ in 0..submitted {
                    let r = executor.next_result().expect("every submitted job yields a result");
                    results.insert(r.job_id, r);
                }
                let mut entries = Vec::with_capacity(jobs.len());
                for (job, slot) in &jobs {
                    let result = results.remove(&job.job_id).expect("result for every job");
                    let crashed = result.status == JobStatus::Crashed;
                    let record = EvaluationRecord {
                        job_id: job.job_id,
                        config_id: slot.config_id,
                        configuration: job.config.clone(),
                        budget,
                        seed: job.seed,
                        loss: result.loss,
                        crashed,
                        learning_curve: result.learning_curve,
                        wall_time: result.wall_time,
                        origin: slot.origin,
                        iteration,
                        bracket: s,
                        rung,
                    };
                    sampler.observe(&record)?;
                    let point = history.push(record.clone());
                    if let (Some(store), Some(p)) = (store.as_mut(), result.predictions) {
                        store.push(PredictionEntry {
                            model_id: format!("job{:06}", job.job_id),
                            budget,
                            predictions: p,
                            val_loss: record.loss,
                            timestamp: history.elapsed(),
                        })?;
                    }
                    if let Some(d) = dir.as_mut() {
                        d.append(&record, point)?;
                    }
                    entries.push(RungEntry {
                        config_id: slot.config_id,
                        loss: record.loss,
                        crashed,
                    });
                }
                if let Some(reason) = halted {
                    break 'run reason;
                }
                if rung + 1 < bracket.rung_budgets.len() {
                    let keep = promote(&entries, self.ladder.eta)?;
                    let mut by_id: HashMap<u64, Slot> = slots.into_iter().map(|s| (s.config_id, s)).collect();
                    slots = keep
                        .iter()
                        .map(|id| by_id.remove(id).expect("promoted id belongs to the rung"))
                        .collect();
                }
            }
            iteration += 1;
        };
        executor.shutdown();
        let predictions = store.filter(|s| !s.is_empty());
        if let (Some(d), Some(s)) = (&dir, &predictions) {
            s.save(&d.root().join(PREDICTIONS_DIR))?;
        }
        Ok(RunOutcome {
            history,
            predictions,
            stop,
            run_id,
        })
    }
}

fn cached_result(r: &EvaluationRecord) -> JobResult {
    JobResult {
        job_id: r.job_id,
        loss: r.loss,
        learning_curve: r.learning_curve.clone(),
        predictions: None,
        wall_time: r.wall_time,
        status: if r.crashed { JobStatus::Crashed } else { JobStatus::Ok },
    }
}

/// Uniform random search at a single budget, evaluated sequentially.
pub fn random_search(
    space: Arc<ConfigurationSpace>,
    objective: &dyn Objective,
    budget: u64,
    n_evaluations: usize,
    seed: u64,
) -> Result<RunHistory, OptimizerError> {
    let settings = SamplerSettings {
        random_fraction: 1.0,
        ..SamplerSettings::default()
    };
    let mut sampler = Sampler::new(space, settings, seed);
    if let Some(c) = objective.candidates() {
        sampler.set_candidates(c)?;
    }
    let mut history = RunHistory::new(budget);
    for i in 0..n_evaluations as u64 {
        let (config, origin) = sampler.next_sample()?;
        let job = Job {
            job_id: i,
            config,
            budget,
            seed: config_seed(seed, i),
        };
        let result = crate::executor::evaluate(objective, &job);
        history.push(EvaluationRecord {
            job_id: i,
            config_id: i,
            configuration: job.config,
            budget,
            seed: job.seed,
            loss: result.loss,
            crashed: result.status == JobStatus::Crashed,
            learning_curve: None,
            wall_time: result.wall_time,
            origin,
            iteration: i,
            bracket: 0,
            rung: 0,
        });
    }
    Ok(history)
}
