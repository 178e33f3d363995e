//! Synthetic learning-curve objectives.
//!
//! The loss of configuration `c` after `b` epochs is
//!
//! ```text
//! loss(c, b) = f_inf(c) + (f0 - f_inf(c)) * b^(-gamma(c)) + noise
//! ```
//!
//! where `f_inf` is a base level minus two Gaussian wells over the unit-cube
//! encoding, `gamma` is affine in one coordinate and the noise is seeded by
//! (configuration, epoch, seed). All constants live in this file so fixtures
//! and results are reproducible.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{Evaluation, Objective, ObjectiveError, ReplayDocument, ReplayRecordDocument};
use crate::configspace::{Configuration, ConfigurationSpace, Domain, HyperparameterSpec, Value};
use crate::ensemble::PredictionMatrix;

pub const INITIAL_LOSS: f64 = 0.9;
pub const NOISE_SCALE: f64 = 0.01;
pub const GAMMA_RANGE: (f64, f64) = (0.3, 1.5);
/// Loss floor at the designed optimum of the reference objectives.
pub const OPTIMUM_LOSS: f64 = 0.05;

const SPACE1: &str = include_str!("../../../../fixtures/space1.json");

#[derive(Debug, Clone, PartialEq)]
pub struct Well {
    pub center: Vec<f64>,
    pub width: f64,
    pub depth: f64,
}

impl Well {
    fn value(&self, weights: &[f64], u: &[f64]) -> f64 {
        let r2: f64 = weights
            .iter()
            .zip(u.iter().zip(&self.center))
            .map(|(w, (x, c))| w * (x - c) * (x - c))
            .sum();
        self.depth * (-r2 / (2.0 * self.width * self.width)).exp()
    }
}

/// Labels and difficulty used when an objective emits prediction matrices.
#[derive(Debug, Clone, PartialEq)]
struct LabelModel {
    labels: Vec<usize>,
    n_classes: usize,
    difficulty_seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCurve {
    name: String,
    space: ConfigurationSpace,
    weights: Vec<f64>,
    base: f64,
    wells: [Well; 2],
    gamma_dim: usize,
    schedule_dim: usize,
    noise: f64,
    salt: u64,
    epoch_seconds: f64,
    optimum: Configuration,
    label_model: Option<LabelModel>,
}

pub(crate) fn hash_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn space1() -> &'static ConfigurationSpace {
    static SPACE: OnceLock<ConfigurationSpace> = OnceLock::new();
    SPACE.get_or_init(|| ConfigurationSpace::parse(SPACE1).expect("bundled space1 parses"))
}

fn space2d() -> ConfigurationSpace {
    let hp = |name: &str| HyperparameterSpec {
        name: name.to_string(),
        domain: Domain::Real { lo: 0.0, hi: 1.0 },
        log_scale: false,
        default: Value::Real(0.5),
    };
    ConfigurationSpace::new("wells2d", vec![hp("x1"), hp("x2")], vec![]).expect("valid 2-d space")
}

impl SyntheticCurve {
    /// Builds an objective whose first well is the global optimum with
    /// `f_inf = optimum_loss` there. The first well's centre is snapped onto
    /// the encoding grid so that the optimum is an exact configuration.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        space: ConfigurationSpace,
        weights: Vec<f64>,
        base: f64,
        mut wells: [Well; 2],
        optimum_loss: f64,
        gamma_dim: usize,
        schedule_dim: usize,
        noise: f64,
        salt: u64,
    ) -> Self {
        let optimum = space
            .from_unit_cube(&wells[0].center)
            .expect("well centre has the space's dimension");
        wells[0].center = space.to_unit_cube(&optimum).expect("decoded optimum encodes");
        let second = wells[1].value(&weights, &wells[0].center);
        wells[0].depth = base - optimum_loss - second;
        Self {
            name: name.into(),
            space,
            weights,
            base,
            wells,
            gamma_dim,
            schedule_dim,
            noise,
            salt,
            epoch_seconds: 1.0,
            optimum,
            label_model: None,
        }
    }

    /// The reference objective over the 7-dimensional shaped-MLP space.
    pub fn wells(noise: f64) -> Self {
        let weights = vec![0.25, 0.05, 0.08, 0.25, 0.2, 0.07, 0.1];
        let wells = [
            Well {
                center: vec![0.7, 0.6, 0.3, 0.65, 0.1, 0.8, 0.2],
                width: 0.22,
                depth: 0.0,
            },
            Well {
                center: vec![0.1, 0.3, 0.7, 0.3, 0.6, 0.3, 0.7],
                width: 0.12,
                depth: 0.35,
            },
        ];
        Self::new(
            "wells",
            space1().clone(),
            weights,
            0.55,
            wells,
            OPTIMUM_LOSS,
            3,
            2,
            noise,
            17,
        )
    }

    /// Two-dimensional variant on `x1, x2 ∈ [0, 1]`.
    pub fn wells2d(noise: f64) -> Self {
        let wells = [
            Well {
                center: vec![0.25, 0.7],
                width: 0.2,
                depth: 0.0,
            },
            Well {
                center: vec![0.8, 0.2],
                width: 0.12,
                depth: 0.3,
            },
        ];
        Self::new(
            "wells2d",
            space2d(),
            vec![0.5, 0.5],
            0.55,
            wells,
            OPTIMUM_LOSS,
            0,
            1,
            noise,
            23,
        )
    }

    /// A family of related tasks on the shaped-MLP space, used as stand-in
    /// datasets. Task `k` jitters the reference constants with a seeded
    /// stream and carries a labelled validation set.
    pub fn task(k: u64, noise: f64) -> Self {
        let reference = Self::wells(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + k);
        let d = reference.space.dim();
        let jitter = |rng: &mut ChaCha8Rng, c: &[f64], amount: f64| -> Vec<f64> {
            c.iter()
                .map(|x| (x + rng.gen_range(-amount..amount)).clamp(0.05, 0.95))
                .collect()
        };
        let mut weights: Vec<f64> = reference.weights.iter().map(|w| w * rng.gen_range(0.6..1.4)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let center1 = jitter(&mut rng, &reference.wells[0].center, 0.3);
        let center2 = jitter(&mut rng, &reference.wells[1].center, 0.3);
        let base = rng.gen_range(0.45..0.65);
        let optimum_loss = rng.gen_range(0.03..0.15);
        let wells = [
            Well {
                center: center1,
                width: rng.gen_range(0.18..0.26),
                depth: 0.0,
            },
            Well {
                center: center2,
                width: rng.gen_range(0.10..0.14),
                depth: rng.gen_range(0.2..0.35),
            },
        ];
        debug_assert_eq!(wells[0].center.len(), d);
        let n_classes = 2 + (k % 3) as usize;
        let n_instances = 300;
        let label_seed = rng.gen::<u64>();
        let mut label_rng = ChaCha8Rng::seed_from_u64(label_seed);
        let labels = (0..n_instances).map(|_| label_rng.gen_range(0..n_classes)).collect();
        let mut task = Self::new(
            format!("task{k}"),
            reference.space.clone(),
            weights,
            base,
            wells,
            optimum_loss,
            3,
            2,
            noise,
            100 + k,
        );
        task.label_model = Some(LabelModel {
            labels,
            n_classes,
            difficulty_seed: label_seed ^ 0x5eed,
        });
        task
    }

    /// Resolves `wells`, `wells2d`, `task<k>`, each optionally suffixed with
    /// `-clean` to switch the noise off.
    pub fn by_name(name: &str) -> Option<Self> {
        let (stem, noise) = match name.strip_suffix("-clean") {
            Some(stem) => (stem, 0.0),
            None => (name, NOISE_SCALE),
        };
        let mut obj = match stem {
            "wells" => Self::wells(noise),
            "wells2d" => Self::wells2d(noise),
            _ => Self::task(stem.strip_prefix("task")?.parse().ok()?, noise),
        };
        obj.name = name.to_string();
        Some(obj)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn configuration_space(&self) -> &ConfigurationSpace {
        &self.space
    }

    /// The designed global optimum c*.
    pub fn optimum(&self) -> &Configuration {
        &self.optimum
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.label_model.as_ref().map(|l| l.n_classes)
    }

    /// Asymptotic loss of the encoded configuration.
    pub fn f_inf(&self, u: &[f64]) -> f64 {
        self.base - self.wells.iter().map(|w| w.value(&self.weights, u)).sum::<f64>()
    }

    pub fn gamma(&self, u: &[f64]) -> f64 {
        GAMMA_RANGE.0 + (GAMMA_RANGE.1 - GAMMA_RANGE.0) * u[self.gamma_dim].clamp(0.0, 1.0)
    }

    fn noise_at(&self, key: &str, epoch: u64, seed: u64, stream: &[u8]) -> f64 {
        if self.noise == 0.0 {
            return 0.0;
        }
        let s = hash_seed(&[
            &self.salt.to_le_bytes(),
            stream,
            key.as_bytes(),
            &epoch.to_le_bytes(),
            &seed.to_le_bytes(),
        ]);
        let z: f64 = ChaCha8Rng::seed_from_u64(s).sample(StandardNormal);
        self.noise * z
    }

    fn noiseless(&self, u: &[f64], epochs: f64) -> f64 {
        let f = self.f_inf(u);
        f + (INITIAL_LOSS - f) * epochs.max(1.0).powf(-self.gamma(u))
    }

    /// Non-adaptive loss after `epoch` epochs.
    pub fn loss_at(&self, config: &Configuration, epoch: u64, seed: u64) -> Result<f64, ObjectiveError> {
        let u = self.space.to_unit_cube(config)?;
        Ok(self.loss_encoded(&u, &config.key(), epoch, seed))
    }

    fn loss_encoded(&self, u: &[f64], key: &str, epoch: u64, seed: u64) -> f64 {
        (self.noiseless(u, epoch as f64) + self.noise_at(key, epoch, seed, b"val")).clamp(0.0, 1.0)
    }

    /// Loss at `epoch` under a schedule that anneals at `budget` instead of
    /// `b_max`: progress is accelerated by `(b_max / budget)^rho(c)`.
    fn adaptive_loss(&self, u: &[f64], key: &str, epoch: u64, budget: u64, b_max: u64, seed: u64) -> f64 {
        let rho = 0.2 + 0.6 * u[self.schedule_dim].clamp(0.0, 1.0);
        let speedup = (b_max as f64 / budget as f64).powf(rho);
        let effective = (epoch as f64 * speedup).min(b_max as f64);
        let stream = format!("adaptive{budget}");
        (self.noiseless(u, effective) + self.noise_at(key, epoch, seed, stream.as_bytes())).clamp(0.0, 1.0)
    }

    /// Accuracy-valued record for the replay format.
    pub fn replay_record(
        &self,
        config: &Configuration,
        seed: u64,
        b_max: u64,
        adaptive_budgets: &[u64],
    ) -> Result<ReplayRecordDocument, ObjectiveError> {
        let u = self.space.to_unit_cube(config)?;
        let key = config.key();
        let round = |x: f64| (x * 1e5).round() / 1e5;
        let val: Vec<f64> = (1..=b_max)
            .map(|t| round(1.0 - self.loss_encoded(&u, &key, t, seed)))
            .collect();
        let train = (1..=b_max)
            .map(|t| {
                let gap = 0.04 * (1.0 - (t as f64).powf(-0.5));
                let x = 1.0 - self.noiseless(&u, t as f64) + gap + self.noise_at(&key, t, seed, b"train");
                round(x.clamp(0.0, 1.0))
            })
            .collect();
        let test = (1..=b_max)
            .map(|t| {
                let x = 1.0 - self.noiseless(&u, t as f64) + self.noise_at(&key, t, seed, b"test");
                round(x.clamp(0.0, 1.0))
            })
            .collect();
        let adaptive: BTreeMap<String, Vec<f64>> = adaptive_budgets
            .iter()
            .filter(|&&b| b < b_max)
            .map(|&b| {
                let curve = (1..=b)
                    .map(|t| round(1.0 - self.adaptive_loss(&u, &key, t, b, b_max, seed)))
                    .collect();
                (b.to_string(), curve)
            })
            .collect();
        Ok(ReplayRecordDocument {
            config: config.clone(),
            seed,
            val_curve: val,
            train_curve: train,
            test_curve: test,
            adaptive_val_curves: if adaptive.is_empty() { None } else { Some(adaptive) },
        })
    }

    /// Freezes this objective into a replay document over `configs`.
    pub fn replay_document(
        &self,
        configs: &[Configuration],
        seeds: &[u64],
        b_max: u64,
        adaptive_budgets: &[u64],
        space_path: &str,
    ) -> Result<ReplayDocument, ObjectiveError> {
        let mut records = Vec::with_capacity(configs.len() * seeds.len());
        for c in configs {
            for &s in seeds {
                records.push(self.replay_record(c, s, b_max, adaptive_budgets)?);
            }
        }
        let (n_classes, n_validation_instances, label_seed) = match &self.label_model {
            Some(l) => (l.n_classes, l.labels.len(), Some(l.difficulty_seed)),
            None => (2, 0, None),
        };
        Ok(ReplayDocument {
            dataset: self.name.clone(),
            space: space_path.to_string(),
            b_max,
            n_classes,
            n_validation_instances,
            labels: self.label_model.as_ref().map(|l| l.labels.clone()),
            label_seed,
            epoch_seconds: self.epoch_seconds,
            records,
        })
    }
}

impl Objective for SyntheticCurve {
    fn evaluate(&self, config: &Configuration, budget: u64, seed: u64) -> Result<Evaluation, ObjectiveError> {
        let u = self.space.to_unit_cube(config)?;
        let key = config.key();
        let curve: Vec<f64> = (1..=budget.max(1))
            .map(|t| self.loss_encoded(&u, &key, t, seed))
            .collect();
        let loss = *curve.last().expect("non-empty curve");
        let predictions = self.label_model.as_ref().map(|l| {
            let model_seed = hash_seed(&[key.as_bytes(), &budget.to_le_bytes(), &seed.to_le_bytes()]);
            synthesize_predictions(&l.labels, l.n_classes, 1.0 - loss, model_seed, l.difficulty_seed)
        });
        Ok(Evaluation {
            loss,
            learning_curve: Some(curve),
            predictions,
            cost: Some(budget as f64 * self.epoch_seconds),
        })
    }

    fn space(&self) -> Option<&ConfigurationSpace> {
        Some(&self.space)
    }

    fn true_labels(&self) -> Option<Vec<usize>> {
        self.label_model.as_ref().map(|l| l.labels.clone())
    }
}

/// Class-probability matrix whose argmax accuracy is `round(accuracy * n) / n`.
///
/// Which instances are answered correctly mixes a shared per-dataset
/// difficulty with a per-model draw, so different models make partly
/// overlapping mistakes. Each row puts the largest probability on the
/// intended class with a random margin.
pub fn synthesize_predictions(
    labels: &[usize],
    n_classes: usize,
    accuracy: f64,
    model_seed: u64,
    difficulty_seed: u64,
) -> PredictionMatrix {
    let n = labels.len();
    let n_classes = n_classes.max(2);
    let mut difficulty_rng = ChaCha8Rng::seed_from_u64(difficulty_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(model_seed);
    let mut order: Vec<(f64, usize)> = (0..n)
        .map(|i| (difficulty_rng.gen::<f64>() + rng.gen::<f64>(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_correct = ((accuracy.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut correct = vec![false; n];
    for (_, i) in order.iter().take(n_correct) {
        correct[*i] = true;
    }
    let temperature = 1.0;
    let mut data = Vec::with_capacity(n * n_classes);
    for (i, &label) in labels.iter().enumerate() {
        let target = if correct[i] {
            label
        } else {
            (label + 1 + rng.gen_range(0..n_classes - 1)) % n_classes
        };
        let mut logits: Vec<f64> = (0..n_classes)
            .map(|_| temperature * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let top_other = logits
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != target)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        logits[target] = top_other + rng.gen_range(0.05..2.0);
        let m = logits[target];
        let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        data.extend(exps.iter().map(|e| e / total));
    }
    PredictionMatrix::new(n, n_classes, data).expect("softmax rows sum to one")
}
