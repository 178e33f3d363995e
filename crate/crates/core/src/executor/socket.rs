//! Out-of-process workers speaking line-delimited JSON over TCP.
//!
//! Each request is one line `{job_id, config, budget, seed}`; each response is
//! one line `{job_id, loss, status, curve?, predictions_path?}`. Prediction
//! matrices travel as CSV files written by the worker.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{evaluate, Evaluation, Job, JobStatus, Objective, ObjectiveError};
use crate::configspace::{Configuration, ConfigurationSpace};
use crate::ensemble::PredictionMatrix;

pub type WireRequest = Job;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub job_id: u64,
    pub loss: f64,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions_path: Option<String>,
}

fn io_err(path: &str, source: std::io::Error) -> ObjectiveError {
    ObjectiveError::Io {
        path: path.to_string(),
        source,
    }
}

/// Client side: one connection per evaluation, so concurrent local workers
/// never share a stream.
#[derive(Debug, Clone)]
pub struct SocketObjective {
    addr: String,
    space: Arc<ConfigurationSpace>,
}

impl SocketObjective {
    pub fn new(addr: impl Into<String>, space: Arc<ConfigurationSpace>) -> Self {
        Self {
            addr: addr.into(),
            space,
        }
    }

    fn round_trip(&self, request: &WireRequest) -> Result<WireResponse, ObjectiveError> {
        let stream = TcpStream::connect(&self.addr).map_err(|e| io_err(&self.addr, e))?;
        let mut writer = stream.try_clone().map_err(|e| io_err(&self.addr, e))?;
        let mut line = serde_json::to_string(request).expect("job serializes");
        line.push('\n');
        writer.write_all(line.as_bytes()).map_err(|e| io_err(&self.addr, e))?;
        let mut reply = String::new();
        BufReader::new(stream)
            .read_line(&mut reply)
            .map_err(|e| io_err(&self.addr, e))?;
        serde_json::from_str(&reply).map_err(|e| ObjectiveError::Crashed(format!("bad worker reply: {e}")))
    }
}

impl Objective for SocketObjective {
    fn evaluate(&self, config: &Configuration, budget: u64, seed: u64) -> Result<Evaluation, ObjectiveError> {
        let request = Job {
            job_id: 0,
            config: config.clone(),
            budget,
            seed,
        };
        let response = self.round_trip(&request)?;
        if response.status == JobStatus::Crashed {
            return Err(ObjectiveError::Crashed(format!("remote job {}", response.job_id)));
        }
        let predictions = match &response.predictions_path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                Some(PredictionMatrix::from_csv(&text).map_err(|e| ObjectiveError::Crashed(e.to_string()))?)
            }
            None => None,
        };
        Ok(Evaluation {
            loss: response.loss,
            learning_curve: response.curve,
            predictions,
            cost: None,
        })
    }

    fn space(&self) -> Option<&ConfigurationSpace> {
        Some(&self.space)
    }
}

fn handle(stream: TcpStream, objective: &dyn Objective, predictions_dir: Option<&PathBuf>) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<WireRequest>(&line) {
            Ok(job) => {
                let result = evaluate(objective, &job);
                let predictions_path = match (&result.predictions, predictions_dir) {
                    (Some(p), Some(dir)) => {
                        let tag = super::synthetic::hash_seed(&[job.config.key().as_bytes(), &job.seed.to_le_bytes()]);
                        let path = dir.join(format!("job-{}-{}-{tag:016x}.csv", job.job_id, job.budget));
                        std::fs::write(&path, p.to_csv())?;
                        Some(path.display().to_string())
                    }
                    _ => None,
                };
                WireResponse {
                    job_id: result.job_id,
                    loss: result.loss,
                    status: result.status,
                    curve: result.learning_curve,
                    predictions_path,
                }
            }
            Err(_) => WireResponse {
                job_id: 0,
                loss: super::CRASH_LOSS,
                status: JobStatus::Crashed,
                curve: None,
                predictions_path: None,
            },
        };
        let mut out = serde_json::to_string(&response).expect("response serializes");
        out.push('\n');
        writer.write_all(out.as_bytes())?;
    }
    Ok(())
}

/// Serves evaluations on `listener` until it fails; each connection gets its
/// own thread.
pub fn serve_socket(
    listener: TcpListener,
    objective: Arc<dyn Objective>,
    predictions_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    if let Some(dir) = &predictions_dir {
        std::fs::create_dir_all(dir)?;
    }
    for stream in listener.incoming() {
        let stream = stream?;
        let objective = objective.clone();
        let dir = predictions_dir.clone();
        std::thread::spawn(move || {
            let _ = handle(stream, objective.as_ref(), dir.as_ref());
        });
    }
    Ok(())
}
