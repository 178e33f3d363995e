//! Portfolio, random and model-based configuration sampling.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EvaluationRecord, OptimizerError, Origin};
use crate::configspace::{Configuration, ConfigurationSpace, DimensionKind};
use crate::kde::{fit_tpe, KdeModel, KdeSettings};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSettings {
    pub kde: KdeSettings,
    /// Probability of a uniform draw even when a model is available.
    pub random_fraction: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            kde: KdeSettings::default(),
            random_fraction: 1.0 / 3.0,
        }
    }
}

/// Finite set that every sample is mapped onto.
#[derive(Debug, Clone)]
struct Candidates {
    configs: Vec<Configuration>,
    encodings: Vec<Vec<f64>>,
}

impl Candidates {
    fn nearest(&self, u: &[f64]) -> &Configuration {
        let mut best = (f64::INFINITY, 0);
        for (i, e) in self.encodings.iter().enumerate() {
            let d: f64 = e.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        &self.configs[best.1]
    }
}

/// Chooses the next configuration to evaluate. Precedence: queued portfolio
/// entries, then a random draw with probability `random_fraction`, then a
/// proposal from the model on the largest budget with enough observations,
/// else a random draw.
#[derive(Debug, Clone)]
pub struct Sampler {
    space: Arc<ConfigurationSpace>,
    kinds: Vec<DimensionKind>,
    settings: SamplerSettings,
    portfolio: VecDeque<Configuration>,
    candidates: Option<Candidates>,
    observations: BTreeMap<u64, Vec<(Vec<f64>, f64)>>,
    /// Last fit, keyed by (budget, observations used).
    model: Option<(u64, usize, KdeModel)>,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(space: Arc<ConfigurationSpace>, settings: SamplerSettings, seed: u64) -> Self {
        Self {
            kinds: space.dimension_kinds(),
            space,
            settings,
            portfolio: VecDeque::new(),
            candidates: None,
            observations: BTreeMap::new(),
            model: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn set_portfolio(&mut self, entries: Vec<Configuration>) {
        self.portfolio = entries.into();
    }

    /// Drops portfolio entries not yet handed out.
    pub fn close_portfolio(&mut self) {
        self.portfolio.clear();
    }

    pub fn portfolio_remaining(&self) -> usize {
        self.portfolio.len()
    }

    /// Restricts samples to a finite candidate set (nearest in the encoding).
    pub fn set_candidates(&mut self, configs: Vec<Configuration>) -> Result<(), OptimizerError> {
        if configs.is_empty() {
            return Err(OptimizerError::History("empty candidate set".into()));
        }
        let encodings = configs
            .iter()
            .map(|c| self.space.to_unit_cube(c))
            .collect::<Result<_, _>>()?;
        self.candidates = Some(Candidates { configs, encodings });
        Ok(())
    }

    /// Feeds a finished evaluation to the model. Crashed runs are ignored.
    pub fn observe(&mut self, record: &EvaluationRecord) -> Result<(), OptimizerError> {
        if record.crashed || !record.loss.is_finite() {
            return Ok(());
        }
        let u = self.space.to_unit_cube(&record.configuration)?;
        self.observations
            .entry(record.budget)
            .or_default()
            .push((u, record.loss));
        Ok(())
    }

    pub fn observations_at(&self, budget: u64) -> usize {
        self.observations.get(&budget).map_or(0, Vec::len)
    }

    /// Largest budget holding at least `d + 2` finished evaluations.
    pub fn model_budget(&self) -> Option<u64> {
        let need = self.space.dim() + 2;
        self.observations
            .iter()
            .rev()
            .find(|(_, obs)| obs.len() >= need)
            .map(|(b, _)| *b)
    }

    fn snap(&self, config: Configuration) -> Result<Configuration, OptimizerError> {
        match &self.candidates {
            Some(c) => Ok(c.nearest(&self.space.to_unit_cube(&config)?).clone()),
            None => Ok(config),
        }
    }

    fn random(&mut self) -> Configuration {
        match &self.candidates {
            Some(c) => c.configs[self.rng.gen_range(0..c.configs.len())].clone(),
            None => self.space.sample_uniform(&mut self.rng),
        }
    }

    pub fn next_sample(&mut self) -> Result<(Configuration, Origin), OptimizerError> {
        if let Some(entry) = self.portfolio.pop_front() {
            let entry = self.space.validate(&entry)?;
            return Ok((self.snap(entry)?, Origin::Portfolio));
        }
        if self.rng.gen::<f64>() < self.settings.random_fraction {
            return Ok((self.random(), Origin::Random));
        }
        let Some(budget) = self.model_budget() else {
            return Ok((self.random(), Origin::Random));
        };
        let n = self.observations[&budget].len();
        if !matches!(&self.model, Some((b, m, _)) if *b == budget && *m == n) {
            match fit_tpe(&self.observations[&budget], &self.kinds, budget, &self.settings.kde) {
                Ok(fitted) => self.model = Some((budget, n, fitted)),
                Err(_) => return Ok((self.random(), Origin::Random)),
            }
        }
        let (_, _, model) = self.model.as_ref().expect("model fitted above");
        let u = model.propose(
            self.settings.kde.n_samples,
            self.settings.kde.bandwidth_factor,
            &mut self.rng,
        );
        let config = self.space.from_unit_cube(&u)?;
        Ok((self.snap(config)?, Origin::Model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::SyntheticCurve;

    fn record(config: Configuration, budget: u64, loss: f64) -> EvaluationRecord {
        EvaluationRecord {
            job_id: 0,
            config_id: 0,
            configuration: config,
            budget,
            seed: 0,
            loss,
            crashed: false,
            learning_curve: None,
            wall_time: 0.0,
            origin: Origin::Random,
            iteration: 0,
            bracket: 0,
            rung: 0,
        }
    }

    fn space() -> Arc<ConfigurationSpace> {
        Arc::new(SyntheticCurve::wells(0.0).configuration_space().clone())
    }

    #[test]
    fn portfolio_then_random() {
        let space = space();
        let mut s = Sampler::new(space.clone(), SamplerSettings::default(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let entries: Vec<_> = (0..16).map(|_| space.sample_uniform(&mut rng)).collect();
        s.set_portfolio(entries.clone());
        for e in &entries {
            let (c, o) = s.next_sample().unwrap();
            assert_eq!(o, Origin::Portfolio);
            assert_eq!(&c, e);
        }
        assert_eq!(s.next_sample().unwrap().1, Origin::Random);
    }

    #[test]
    fn model_uses_largest_ready_budget() {
        let space = space();
        let mut s = Sampler::new(space.clone(), SamplerSettings::default(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(s.model_budget(), None);
        for i in 0..space.dim() + 2 {
            s.observe(&record(space.sample_uniform(&mut rng), 25, i as f64))
                .unwrap();
        }
        s.observe(&record(space.sample_uniform(&mut rng), 50, 0.1)).unwrap();
        assert_eq!(s.model_budget(), Some(25));
        let origins: Vec<Origin> = (0..300).map(|_| s.next_sample().unwrap().1).collect();
        assert!(origins.contains(&Origin::Model));
    }

    #[test]
    fn random_fraction_is_respected() {
        let space = space();
        let mut s = Sampler::new(space.clone(), SamplerSettings::default(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..30 {
            s.observe(&record(space.sample_uniform(&mut rng), 12, i as f64))
                .unwrap();
        }
        let n = 10_000;
        let random = (0..n).filter(|_| s.next_sample().unwrap().1 == Origin::Random).count();
        let frac = random as f64 / n as f64;
        assert!((frac - 1.0 / 3.0).abs() < 0.05, "{frac}");
    }

    #[test]
    fn samples_snap_to_candidates() {
        let space = space();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pool: Vec<_> = (0..20).map(|_| space.sample_uniform(&mut rng)).collect();
        let mut s = Sampler::new(space.clone(), SamplerSettings::default(), 4);
        s.set_candidates(pool.clone()).unwrap();
        for i in 0..30 {
            s.observe(&record(pool[i % 20].clone(), 12, i as f64)).unwrap();
        }
        for _ in 0..100 {
            assert!(pool.contains(&s.next_sample().unwrap().0));
        }
    }
}
