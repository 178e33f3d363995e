//! Master–worker evaluation fabric and the objectives it runs.
//!
//! The master submits [`Job`]s to a pool of worker threads and receives
//! [`JobResult`]s over a channel. A worker that dies while holding a job has
//! that job re-queued once; a second loss marks it crashed.

mod replay;
mod socket;
mod synthetic;

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use serde::{Deserialize, Serialize};

use crate::configspace::{Configuration, ConfigurationSpace};
use crate::ensemble::PredictionMatrix;

pub use replay::{
    load_replay, LookupMode, ReplayBundle, ReplayDocument, ReplayObjective, ReplayRecord, ReplayRecordDocument,
};
pub use socket::{serve_socket, SocketObjective, WireRequest, WireResponse};
pub use synthetic::{synthesize_predictions, SyntheticCurve, Well};

/// Loss assigned to crashed evaluations (worst possible for accuracy-based losses).
pub const CRASH_LOSS: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("evaluation crashed: {0}")]
    Crashed(String),
    #[error("configuration is not recorded in the bundle: {0}")]
    UnknownConfiguration(String),
    #[error("budget {budget} exceeds the recorded curve length {available}")]
    BudgetOutOfRange { budget: u64, available: usize },
    #[error("invalid objective specification `{0}`")]
    InvalidSpec(String),
    #[error("replay bundle {path} is invalid: {message}")]
    InvalidBundle { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Space(#[from] crate::configspace::SpaceError),
}

/// One unit of work handed to a worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: u64,
    pub config: Configuration,
    pub budget: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Ok,
    Crashed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobResult {
    pub job_id: u64,
    pub loss: f64,
    pub learning_curve: Option<Vec<f64>>,
    pub predictions: Option<PredictionMatrix>,
    /// Evaluation duration in seconds; simulated for replay and synthetic
    /// objectives, measured otherwise.
    pub wall_time: f64,
    pub status: JobStatus,
}

impl JobResult {
    pub fn crashed(job_id: u64, wall_time: f64) -> Self {
        Self {
            job_id,
            loss: CRASH_LOSS,
            learning_curve: None,
            predictions: None,
            wall_time,
            status: JobStatus::Crashed,
        }
    }
}

/// What an objective reports for one evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    pub loss: f64,
    pub learning_curve: Option<Vec<f64>>,
    pub predictions: Option<PredictionMatrix>,
    /// Simulated duration; `None` means the executor measures wall time.
    pub cost: Option<f64>,
}

/// A black-box function of (configuration, budget, seed). Implementations
/// must be deterministic in those three inputs.
pub trait Objective: Send + Sync {
    fn evaluate(&self, config: &Configuration, budget: u64, seed: u64) -> Result<Evaluation, ObjectiveError>;

    /// The space the objective is defined on, when it carries one.
    fn space(&self) -> Option<&ConfigurationSpace> {
        None
    }

    /// Finite candidate set for tabular objectives; samplers snap onto it.
    fn candidates(&self) -> Option<Vec<Configuration>> {
        None
    }

    /// Validation labels matching emitted prediction matrices.
    fn true_labels(&self) -> Option<Vec<usize>> {
        None
    }
}

impl<T: Objective + ?Sized> Objective for Arc<T> {
    fn evaluate(&self, c: &Configuration, b: u64, s: u64) -> Result<Evaluation, ObjectiveError> {
        (**self).evaluate(c, b, s)
    }
    fn space(&self) -> Option<&ConfigurationSpace> {
        (**self).space()
    }
    fn candidates(&self) -> Option<Vec<Configuration>> {
        (**self).candidates()
    }
    fn true_labels(&self) -> Option<Vec<usize>> {
        (**self).true_labels()
    }
}

/// Runs one job. Objective errors and non-finite losses become crashed
/// results.
pub fn evaluate(objective: &dyn Objective, job: &Job) -> JobResult {
    let started = Instant::now();
    let outcome = objective.evaluate(&job.config, job.budget, job.seed);
    let elapsed = started.elapsed().as_secs_f64();
    match outcome {
        Ok(e) if e.loss.is_finite() => JobResult {
            job_id: job.job_id,
            loss: e.loss,
            learning_curve: e.learning_curve,
            predictions: e.predictions,
            wall_time: e.cost.unwrap_or(elapsed),
            status: JobStatus::Ok,
        },
        Ok(e) => JobResult::crashed(job.job_id, e.cost.unwrap_or(elapsed)),
        Err(_) => JobResult::crashed(job.job_id, elapsed),
    }
}

/// Objective that sleeps for a fixed time and returns a constant loss; used
/// to measure dispatch overhead and parallel speedup.
#[derive(Debug, Clone)]
pub struct SleepObjective {
    pub duration: Duration,
    pub loss: f64,
}

impl Objective for SleepObjective {
    fn evaluate(&self, _: &Configuration, _: u64, _: u64) -> Result<Evaluation, ObjectiveError> {
        std::thread::sleep(self.duration);
        Ok(Evaluation {
            loss: self.loss,
            ..Evaluation::default()
        })
    }
}

/// Builds an objective from a URI: `replay:<path>[?mode=nearest]`,
/// `synthetic:<name>` or `socket:<addr>` (the latter needs a space).
pub fn objective_from_uri(
    uri: &str,
    space: Option<Arc<ConfigurationSpace>>,
) -> Result<Arc<dyn Objective>, ObjectiveError> {
    let (scheme, rest) = uri
        .split_once(':')
        .ok_or_else(|| ObjectiveError::InvalidSpec(uri.to_string()))?;
    match scheme {
        "replay" => {
            let (path, mode) = match rest.split_once('?') {
                Some((p, "mode=nearest")) => (p, LookupMode::Nearest),
                Some((p, "mode=strict")) => (p, LookupMode::Strict),
                Some(_) => return Err(ObjectiveError::InvalidSpec(uri.to_string())),
                None => (rest, LookupMode::Strict),
            };
            let bundle = load_replay(path)?;
            Ok(Arc::new(ReplayObjective::new(Arc::new(bundle), mode)))
        }
        "synthetic" => SyntheticCurve::by_name(rest)
            .map(|s| Arc::new(s) as Arc<dyn Objective>)
            .ok_or_else(|| ObjectiveError::InvalidSpec(uri.to_string())),
        "socket" => {
            let space = space.ok_or_else(|| ObjectiveError::InvalidSpec(format!("{uri} (needs --space)")))?;
            Ok(Arc::new(SocketObjective::new(rest, space)))
        }
        _ => Err(ObjectiveError::InvalidSpec(uri.to_string())),
    }
}

// ---------------------------------------------------------------------------
// worker pool
// ---------------------------------------------------------------------------

enum Event {
    Started { job_id: u64 },
    Finished { result: JobResult },
    Lost { job_id: u64 },
    Exited,
}

struct InFlight {
    job: Job,
    attempts: u32,
}

/// Pool of worker threads fed from a shared job queue.
pub struct Executor {
    job_tx: Option<Sender<Job>>,
    job_rx: Receiver<Job>,
    events: Receiver<Event>,
    kill_flags: Vec<Arc<AtomicBool>>,
    handles: Vec<JoinHandle<()>>,
    alive: usize,
    pending: HashMap<u64, InFlight>,
    ready: VecDeque<JobResult>,
    executions: HashMap<u64, u32>,
}

/// Maximum number of times a job is handed to a worker.
const MAX_ATTEMPTS: u32 = 2;

impl Executor {
    pub fn new(objective: Arc<dyn Objective>, n_workers: usize) -> Self {
        let n_workers = n_workers.max(1);
        let (job_tx, job_rx) = unbounded::<Job>();
        let (event_tx, events) = unbounded::<Event>();
        let mut kill_flags = Vec::with_capacity(n_workers);
        let mut handles = Vec::with_capacity(n_workers);
        for _ in 0..n_workers {
            let flag = Arc::new(AtomicBool::new(false));
            kill_flags.push(flag.clone());
            let rx = job_rx.clone();
            let tx = event_tx.clone();
            let objective = objective.clone();
            handles.push(std::thread::spawn(move || worker_loop(objective, rx, tx, flag)));
        }
        Self {
            job_tx: Some(job_tx),
            job_rx,
            events,
            kill_flags,
            handles,
            alive: n_workers,
            pending: HashMap::new(),
            ready: VecDeque::new(),
            executions: HashMap::new(),
        }
    }

    pub fn n_workers(&self) -> usize {
        self.kill_flags.len()
    }

    pub fn alive_workers(&self) -> usize {
        self.alive
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }

    /// How many times each job was started on a worker.
    pub fn executions(&self) -> &HashMap<u64, u32> {
        &self.executions
    }

    pub fn submit(&mut self, job: Job) {
        self.pending.insert(
            job.job_id,
            InFlight {
                job: job.clone(),
                attempts: 1,
            },
        );
        self.send(job);
    }

    fn send(&mut self, job: Job) {
        // the queue only closes at shutdown, after which nothing is submitted
        if let Some(tx) = &self.job_tx {
            let _ = tx.send(job);
        }
    }

    /// Simulates the death of a worker: it drops whatever it is running and
    /// exits.
    pub fn kill_worker(&self, worker: usize) {
        if let Some(flag) = self.kill_flags.get(worker) {
            flag.store(true, Ordering::SeqCst);
        }
    }

    fn handle_loss(&mut self, job_id: u64) {
        let Some(entry) = self.pending.get_mut(&job_id) else {
            return;
        };
        if entry.attempts < MAX_ATTEMPTS && self.alive > 0 {
            entry.attempts += 1;
            let job = entry.job.clone();
            self.send(job);
        } else {
            self.pending.remove(&job_id);
            self.ready.push_back(JobResult::crashed(job_id, 0.0));
        }
    }

    fn crash_stranded(&mut self) {
        while self.job_rx.try_recv().is_ok() {}
        let mut ids: Vec<u64> = self.pending.keys().copied().collect();
        ids.sort_unstable();
        for id in ids {
            self.pending.remove(&id);
            self.ready.push_back(JobResult::crashed(id, 0.0));
        }
    }

    /// Next finished result, blocking until one is available. Returns `None`
    /// when nothing is in flight.
    pub fn next_result(&mut self) -> Option<JobResult> {
        loop {
            if let Some(r) = self.ready.pop_front() {
                return Some(r);
            }
            if self.pending.is_empty() {
                return None;
            }
            if self.alive == 0 {
                self.crash_stranded();
                continue;
            }
            match self.events.recv() {
                Ok(Event::Started { job_id }) => {
                    *self.executions.entry(job_id).or_insert(0) += 1;
                }
                Ok(Event::Finished { result }) => {
                    if self.pending.remove(&result.job_id).is_some() {
                        return Some(result);
                    }
                }
                Ok(Event::Lost { job_id }) => self.handle_loss(job_id),
                Ok(Event::Exited) => self.alive = self.alive.saturating_sub(1),
                Err(_) => {
                    self.alive = 0;
                }
            }
        }
    }

    /// Submits all jobs and collects their results in completion order.
    pub fn run_batch(&mut self, jobs: Vec<Job>) -> Vec<JobResult> {
        let n = jobs.len();
        for job in jobs {
            self.submit(job);
        }
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            match self.next_result() {
                Some(r) => out.push(r),
                None => break,
            }
        }
        out
    }

    /// Waits for in-flight jobs, then stops the workers.
    pub fn shutdown(mut self) -> Vec<JobResult> {
        let mut rest = Vec::new();
        while let Some(r) = self.next_result() {
            rest.push(r);
        }
        self.stop();
        rest
    }

    fn stop(&mut self) {
        self.job_tx.take();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for Executor {
    fn drop(&mut self) {
        self.stop();
    }
}

fn worker_loop(objective: Arc<dyn Objective>, jobs: Receiver<Job>, events: Sender<Event>, killed: Arc<AtomicBool>) {
    while let Ok(job) = jobs.recv() {
        if killed.load(Ordering::SeqCst) {
            let _ = events.send(Event::Lost { job_id: job.job_id });
            break;
        }
        let _ = events.send(Event::Started { job_id: job.job_id });
        let outcome = catch_unwind(AssertUnwindSafe(|| evaluate(objective.as_ref(), &job)));
        let event = match outcome {
            Ok(_) if killed.load(Ordering::SeqCst) => {
                let _ = events.send(Event::Lost { job_id: job.job_id });
                break;
            }
            Ok(result) => Event::Finished { result },
            Err(_) => Event::Lost { job_id: job.job_id },
        };
        if events.send(event).is_err() {
            break;
        }
    }
    let _ = events.send(Event::Exited);
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn job(id: u64) -> Job {
        Job {
            job_id: id,
            config: Configuration::default(),
            budget: 1,
            seed: 0,
        }
    }

    struct Flaky {
        calls: Mutex<HashMap<u64, u32>>,
        panic_always: bool,
    }

    impl Objective for Flaky {
        fn evaluate(&self, _: &Configuration, budget: u64, seed: u64) -> Result<Evaluation, ObjectiveError> {
            let mut calls = self.calls.lock().unwrap();
            let n = calls.entry(seed).or_insert(0);
            *n += 1;
            let first = *n == 1;
            drop(calls);
            if seed == 7 && (first || self.panic_always) {
                panic!("worker died");
            }
            if seed == 3 {
                return Err(ObjectiveError::Crashed("boom".into()));
            }
            Ok(Evaluation {
                loss: budget as f64,
                ..Evaluation::default()
            })
        }
    }

    #[test]
    fn single_worker_keeps_dispatch_order() {
        let obj = Arc::new(SleepObjective {
            duration: Duration::from_millis(1),
            loss: 0.5,
        });
        let mut ex = Executor::new(obj, 1);
        let ids: Vec<u64> = ex
            .run_batch((0..20).map(job).collect())
            .iter()
            .map(|r| r.job_id)
            .collect();
        assert_eq!(ids, (0..20).collect::<Vec<_>>());
        assert!(ex.shutdown().is_empty());
    }

    #[test]
    fn crashes_and_panics() {
        for panic_always in [false, true] {
            let obj = Arc::new(Flaky {
                calls: Mutex::new(HashMap::new()),
                panic_always,
            });
            let mut ex = Executor::new(obj, 2);
            let jobs: Vec<Job> = [1u64, 3, 7].iter().map(|&s| Job { seed: s, ..job(s) }).collect();
            let mut results = ex.run_batch(jobs);
            results.sort_by_key(|r| r.job_id);
            assert_eq!(results[0].status, JobStatus::Ok);
            assert_eq!(results[1].status, JobStatus::Crashed);
            assert_eq!(results[1].loss, CRASH_LOSS);
            let expected = if panic_always {
                JobStatus::Crashed
            } else {
                JobStatus::Ok
            };
            assert_eq!(results[2].status, expected);
            assert_eq!(ex.executions()[&7], 2);
        }
    }

    #[test]
    fn all_workers_dead_crashes_remaining() {
        let obj = Arc::new(SleepObjective {
            duration: Duration::from_millis(20),
            loss: 0.5,
        });
        let mut ex = Executor::new(obj, 1);
        for i in 0..4 {
            ex.submit(job(i));
        }
        ex.kill_worker(0);
        let mut results = Vec::new();
        while let Some(r) = ex.next_result() {
            results.push(r);
        }
        assert_eq!(results.len(), 4);
        assert!(results.iter().all(|r| r.status == JobStatus::Crashed));
    }

    #[test]
    fn uri_parsing() {
        assert!(objective_from_uri("nonsense", None).is_err());
        assert!(objective_from_uri("synthetic:nope", None).is_err());
        assert!(objective_from_uri("socket:127.0.0.1:1", None).is_err());
        assert!(objective_from_uri("synthetic:wells", None).is_ok());
    }
}
