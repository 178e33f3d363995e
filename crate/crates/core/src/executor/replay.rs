//! Tabular objective backed by frozen per-epoch accuracy curves.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{synthesize_predictions, Evaluation, Objective, ObjectiveError};
use crate::configspace::{Configuration, ConfigurationSpace};

/// On-disk record. `val_curve[i]` is the validation accuracy after epoch
/// `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRecordDocument {
    pub config: Configuration,
    pub seed: u64,
    pub val_curve: Vec<f64>,
    pub train_curve: Vec<f64>,
    pub test_curve: Vec<f64>,
    /// Validation curves of runs whose schedule was set up for a smaller
    /// budget, keyed by that budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive_val_curves: Option<BTreeMap<String, Vec<f64>>>,
}

/// On-disk bundle. `space` is resolved relative to the bundle file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayDocument {
    pub dataset: String,
    pub space: String,
    pub b_max: u64,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    #[serde(default)]
    pub n_validation_instances: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_seed: Option<u64>,
    #[serde(default = "default_epoch_seconds")]
    pub epoch_seconds: f64,
    pub records: Vec<ReplayRecordDocument>,
}

fn default_classes() -> usize {
    2
}

fn default_epoch_seconds() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub config: Configuration,
    pub seed: u64,
    pub val_curve: Vec<f64>,
    pub train_curve: Vec<f64>,
    pub test_curve: Vec<f64>,
    pub adaptive_val_curves: BTreeMap<u64, Vec<f64>>,
}

impl ReplayRecord {
    /// Validation loss after `budget` epochs.
    pub fn val_loss(&self, budget: u64) -> Option<f64> {
        let b = usize::try_from(budget).ok()?;
        (b >= 1).then(|| self.val_curve.get(b - 1).map(|a| 1.0 - a))?
    }

    /// Validation loss at `budget` of the run scheduled for `budget` epochs.
    pub fn adaptive_val_loss(&self, budget: u64) -> Option<f64> {
        let curve = self.adaptive_val_curves.get(&budget)?;
        curve
            .get(usize::try_from(budget).ok()?.checked_sub(1)?)
            .map(|a| 1.0 - a)
    }

    pub fn test_loss(&self, budget: u64) -> Option<f64> {
        let b = usize::try_from(budget).ok()?;
        (b >= 1).then(|| self.test_curve.get(b - 1).map(|a| 1.0 - a))?
    }
}

/// Validated replay data for one dataset.
#[derive(Debug, Clone)]
pub struct ReplayBundle {
    pub dataset_name: String,
    pub space: Arc<ConfigurationSpace>,
    pub space_path: Option<PathBuf>,
    pub b_max: u64,
    pub n_classes: usize,
    pub n_validation_instances: usize,
    pub labels: Option<Vec<usize>>,
    pub label_seed: u64,
    pub epoch_seconds: f64,
    pub records: Vec<ReplayRecord>,
    configs: Vec<Configuration>,
    encodings: Vec<Vec<f64>>,
    by_key: HashMap<String, usize>,
    /// Per distinct configuration: (seed, record index), sorted by seed.
    seeds: Vec<Vec<(u64, usize)>>,
}

fn invalid(path: &str, message: impl Into<String>) -> ObjectiveError {
    ObjectiveError::InvalidBundle {
        path: path.to_string(),
        message: message.into(),
    }
}

fn check_curve(path: &str, what: &str, curve: &[f64], need: u64, record: usize) -> Result<(), ObjectiveError> {
    if (curve.len() as u64) < need {
        return Err(invalid(
            path,
            format!("record {record}: {what} curve too short ({} < {need})", curve.len()),
        ));
    }
    if let Some(a) = curve.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(invalid(
            path,
            format!("record {record}: {what} accuracy {a} outside [0, 1]"),
        ));
    }
    Ok(())
}

impl ReplayBundle {
    /// Validates a document against an already-loaded space. `path` is only
    /// used in error messages.
    pub fn from_document(
        doc: ReplayDocument,
        space: Arc<ConfigurationSpace>,
        path: &str,
    ) -> Result<Self, ObjectiveError> {
        if doc.records.is_empty() {
            return Err(invalid(path, "no records"));
        }
        if doc.b_max == 0 {
            return Err(invalid(path, "b_max must be positive"));
        }
        if doc.n_classes < 2 {
            return Err(invalid(path, "n_classes must be at least 2"));
        }
        if !(doc.epoch_seconds.is_finite() && doc.epoch_seconds >= 0.0) {
            return Err(invalid(path, "epoch_seconds must be finite and non-negative"));
        }
        if let Some(labels) = &doc.labels {
            if labels.len() != doc.n_validation_instances {
                return Err(invalid(
                    path,
                    format!(
                        "{} labels for {} validation instances",
                        labels.len(),
                        doc.n_validation_instances
                    ),
                ));
            }
            if labels.iter().any(|&l| l >= doc.n_classes) {
                return Err(invalid(path, "label outside the class range"));
            }
        }
        let mut records = Vec::with_capacity(doc.records.len());
        let mut configs = Vec::new();
        let mut encodings = Vec::new();
        let mut by_key = HashMap::new();
        let mut seeds: Vec<Vec<(u64, usize)>> = Vec::new();
        for (i, r) in doc.records.into_iter().enumerate() {
            let config = space
                .validate(&r.config)
                .map_err(|e| invalid(path, format!("record {i}: {e}")))?;
            check_curve(path, "validation", &r.val_curve, doc.b_max, i)?;
            check_curve(path, "train", &r.train_curve, doc.b_max, i)?;
            check_curve(path, "test", &r.test_curve, doc.b_max, i)?;
            let mut adaptive = BTreeMap::new();
            for (k, curve) in r.adaptive_val_curves.unwrap_or_default() {
                let budget: u64 = k
                    .parse()
                    .map_err(|_| invalid(path, format!("record {i}: adaptive budget `{k}` is not an integer")))?;
                check_curve(path, "adaptive validation", &curve, budget, i)?;
                adaptive.insert(budget, curve);
            }
            let key = config.key();
            let slot = match by_key.get(&key) {
                Some(&slot) => slot,
                None => {
                    let slot = configs.len();
                    encodings.push(space.to_unit_cube(&config)?);
                    configs.push(config.clone());
                    seeds.push(Vec::new());
                    by_key.insert(key, slot);
                    slot
                }
            };
            if seeds[slot].iter().any(|(s, _)| *s == r.seed) {
                return Err(invalid(path, format!("record {i}: duplicate (configuration, seed)")));
            }
            seeds[slot].push((r.seed, i));
            records.push(ReplayRecord {
                config,
                seed: r.seed,
                val_curve: r.val_curve,
                train_curve: r.train_curve,
                test_curve: r.test_curve,
                adaptive_val_curves: adaptive,
            });
        }
        for s in &mut seeds {
            s.sort_unstable();
        }
        Ok(Self {
            dataset_name: doc.dataset,
            space,
            space_path: None,
            b_max: doc.b_max,
            n_classes: doc.n_classes,
            n_validation_instances: doc.n_validation_instances,
            labels: doc.labels,
            label_seed: doc.label_seed.unwrap_or(0),
            epoch_seconds: doc.epoch_seconds,
            records,
            configs,
            encodings,
            by_key,
            seeds,
        })
    }

    /// Distinct recorded configurations in first-appearance order.
    pub fn configs(&self) -> &[Configuration] {
        &self.configs
    }

    /// Index into [`configs`](Self::configs) of a recorded configuration.
    pub fn config_index(&self, config: &Configuration) -> Option<usize> {
        let normalized = self.space.validate(config).ok()?;
        self.by_key.get(&normalized.key()).copied()
    }

    /// Recorded configuration closest in the unit-cube encoding; ties go to
    /// the earlier configuration.
    pub fn nearest(&self, config: &Configuration) -> Result<usize, ObjectiveError> {
        let u = self.space.to_unit_cube(config)?;
        let mut best = (f64::INFINITY, 0);
        for (i, e) in self.encodings.iter().enumerate() {
            let d: f64 = e.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        Ok(best.1)
    }

    /// Record for configuration slot `slot`: the exact seed when recorded,
    /// otherwise the `seed mod n`-th recorded seed.
    pub fn record(&self, slot: usize, seed: u64) -> &ReplayRecord {
        let seeds = &self.seeds[slot];
        let idx = match seeds.iter().find(|(s, _)| *s == seed) {
            Some((_, i)) => *i,
            None => seeds[(seed % seeds.len() as u64) as usize].1,
        };
        &self.records[idx]
    }

    /// All records of configuration slot `slot`, ordered by seed.
    pub fn records_of(&self, slot: usize) -> impl Iterator<Item = &ReplayRecord> {
        self.seeds[slot].iter().map(|(_, i)| &self.records[*i])
    }

    /// Validation loss after `budget` epochs, averaged over recorded seeds.
    pub fn mean_val_loss(&self, slot: usize, budget: u64) -> Option<f64> {
        let losses: Option<Vec<f64>> = self.records_of(slot).map(|r| r.val_loss(budget)).collect();
        let losses = losses?;
        Some(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// Reads and validates a replay bundle from a JSON file.
pub fn load_replay(path: impl AsRef<Path>) -> Result<ReplayBundle, ObjectiveError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ObjectiveError::Io {
        path: shown.clone(),
        source,
    })?;
    let doc: ReplayDocument =
        serde_json::from_str(&text).map_err(|e| invalid(&shown, format!("schema violation: {e}")))?;
    let space_path = path.parent().unwrap_or_else(|| Path::new(".")).join(&doc.space);
    let space = ConfigurationSpace::from_path(&space_path)?;
    let mut bundle = ReplayBundle::from_document(doc, Arc::new(space), &shown)?;
    bundle.space_path = Some(space_path);
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LookupMode {
    /// Unrecorded configurations are an error.
    #[default]
    Strict,
    /// Unrecorded configurations answer with their nearest recorded neighbour.
    Nearest,
}

#[derive(Debug, Clone)]
pub struct ReplayObjective {
    bundle: Arc<ReplayBundle>,
    mode: LookupMode,
}

impl ReplayObjective {
    pub fn new(bundle: Arc<ReplayBundle>, mode: LookupMode) -> Self {
        Self { bundle, mode }
    }

    pub fn bundle(&self) -> &ReplayBundle {
        &self.bundle
    }

    fn slot(&self, config: &Configuration) -> Result<usize, ObjectiveError> {
        match (self.bundle.config_index(config), self.mode) {
            (Some(slot), _) => Ok(slot),
            (None, LookupMode::Nearest) => self.bundle.nearest(config),
            (None, LookupMode::Strict) => Err(ObjectiveError::UnknownConfiguration(config.key())),
        }
    }
}

impl Objective for ReplayObjective {
    fn evaluate(&self, config: &Configuration, budget: u64, seed: u64) -> Result<Evaluation, ObjectiveError> {
        let slot = self.slot(config)?;
        let record = self.bundle.record(slot, seed);
        let available = record.val_curve.len();
        if budget == 0 || budget as usize > available {
            return Err(ObjectiveError::BudgetOutOfRange { budget, available });
        }
        let curve: Vec<f64> = record.val_curve[..budget as usize].iter().map(|a| 1.0 - a).collect();
        let loss = curve[budget as usize - 1];
        let predictions = self.bundle.labels.as_ref().map(|labels| {
            let model_seed = super::synthetic::hash_seed(&[
                record.config.key().as_bytes(),
                &record.seed.to_le_bytes(),
                &budget.to_le_bytes(),
            ]);
            synthesize_predictions(
                labels,
                self.bundle.n_classes,
                1.0 - loss,
                model_seed,
                self.bundle.label_seed,
            )
        });
        Ok(Evaluation {
            loss,
            learning_curve: Some(curve),
            predictions,
            cost: Some(budget as f64 * self.bundle.epoch_seconds),
        })
    }

    fn space(&self) -> Option<&ConfigurationSpace> {
        Some(&self.bundle.space)
    }

    fn candidates(&self) -> Option<Vec<Configuration>> {
        Some(self.bundle.configs.clone())
    }

    fn true_labels(&self) -> Option<Vec<usize>> {
        self.bundle.labels.clone()
    }
}
