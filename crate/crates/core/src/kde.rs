//! Good/bad kernel density model used to propose configurations.
//!
//! Observations at one budget are split by loss into a "good" and a "bad"
//! set. Each set gets a product-kernel density (truncated Gaussians on numeric
//! coordinates, Aitchison–Aitken on categorical ones). Proposals are drawn
//! from a widened good density and ranked by the good/bad log-density ratio.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erf;

use crate::configspace::DimensionKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdeSettings {
    pub split_quantile: f64,
    pub n_samples: usize,
    pub bandwidth_factor: f64,
    pub min_bandwidth: f64,
}

impl Default for KdeSettings {
    fn default() -> Self {
        Self {
            split_quantile: 0.15,
            n_samples: 64,
            bandwidth_factor: 3.0,
            min_bandwidth: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KdeError {
    #[error("too few observations: got {got}, need at least {need}")]
    TooFewObservations { got: usize, need: usize },
    #[error("non-finite loss at observation {0}")]
    NonFiniteLoss(usize),
    #[error("point has length {got}, model has {expected} dimensions")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Good,
    Bad,
}

#[derive(Debug, Clone)]
pub struct KdeModel {
    pub budget: u64,
    pub good_points: Vec<Vec<f64>>,
    pub bad_points: Vec<Vec<f64>>,
    pub good_bandwidths: Vec<f64>,
    pub bad_bandwidths: Vec<f64>,
    pub kinds: Vec<DimensionKind>,
}

const SCOTT_FACTOR: f64 = 1.059;

fn bandwidths(points: &[Vec<f64>], kinds: &[DimensionKind], min_bandwidth: f64) -> Vec<f64> {
    let n = points.len() as f64;
    let d = kinds.len() as f64;
    let shrink = n.powf(-1.0 / (d + 4.0));
    kinds
        .iter()
        .enumerate()
        .map(|(j, kind)| {
            let mean = points.iter().map(|p| p[j]).sum::<f64>() / n;
            let var = if points.len() > 1 {
                points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let bw = (SCOTT_FACTOR * var.sqrt() * shrink).max(min_bandwidth);
            match kind {
                DimensionKind::Categorical { levels } if *levels > 1 => bw.min((*levels - 1) as f64 / *levels as f64),
                _ => bw,
            }
        })
        .collect()
}

/// Fits the good/bad densities on `(unit vector, loss)` observations.
pub fn fit_tpe(
    observations: &[(Vec<f64>, f64)],
    kinds: &[DimensionKind],
    budget: u64,
    settings: &KdeSettings,
) -> Result<KdeModel, KdeError> {
    let d = kinds.len();
    let n = observations.len();
    if n < d + 2 {
        return Err(KdeError::TooFewObservations { got: n, need: d + 2 });
    }
    for (i, (point, loss)) in observations.iter().enumerate() {
        if !loss.is_finite() {
            return Err(KdeError::NonFiniteLoss(i));
        }
        if point.len() != d {
            return Err(KdeError::LengthMismatch {
                expected: d,
                got: point.len(),
            });
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| observations[a].1.total_cmp(&observations[b].1));
    let n_good = ((settings.split_quantile * n as f64).ceil() as usize).max(d + 1).min(n);
    let n_bad = (n - n_good).max(d + 1);
    let good_points: Vec<Vec<f64>> = order[..n_good].iter().map(|&i| observations[i].0.clone()).collect();
    let bad_points: Vec<Vec<f64>> = order[n - n_bad..].iter().map(|&i| observations[i].0.clone()).collect();
    Ok(KdeModel {
        budget,
        good_bandwidths: bandwidths(&good_points, kinds, settings.min_bandwidth),
        bad_bandwidths: bandwidths(&bad_points, kinds, settings.min_bandwidth),
        good_points,
        bad_points,
        kinds: kinds.to_vec(),
    })
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Log of a Gaussian kernel centred at `center`, truncated to [0, 1].
fn log_truncated_gauss(x: f64, center: f64, h: f64) -> f64 {
    let z = (x - center) / h;
    let mass = std_normal_cdf((1.0 - center) / h) - std_normal_cdf(-center / h);
    -0.5 * z * z - (h * (2.0 * std::f64::consts::PI).sqrt()).ln() - mass.ln()
}

fn log_aitchison_aitken(x: f64, center: f64, lambda: f64, levels: usize) -> f64 {
    if levels <= 1 {
        return 0.0;
    }
    if x.round() == center.round() {
        (1.0 - lambda).ln()
    } else {
        (lambda / (levels - 1) as f64).ln()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl KdeModel {
    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    fn side(&self, side: Side) -> (&[Vec<f64>], &[f64]) {
        match side {
            Side::Good => (&self.good_points, &self.good_bandwidths),
            Side::Bad => (&self.bad_points, &self.bad_bandwidths),
        }
    }

    /// Log mixture density of one side at `point`.
    pub fn log_density(&self, side: Side, point: &[f64]) -> Result<f64, KdeError> {
        if point.len() != self.dim() {
            return Err(KdeError::LengthMismatch {
                expected: self.dim(),
                got: point.len(),
            });
        }
        let (points, bws) = self.side(side);
        let terms: Vec<f64> = points
            .iter()
            .map(|center| {
                self.kinds
                    .iter()
                    .enumerate()
                    .map(|(j, kind)| match kind {
                        DimensionKind::Categorical { levels } => {
                            log_aitchison_aitken(point[j], center[j], bws[j], *levels)
                        }
                        _ => log_truncated_gauss(point[j], center[j], bws[j]),
                    })
                    .sum::<f64>()
            })
            .collect();
        Ok(log_sum_exp(&terms) - (points.len() as f64).ln())
    }

    /// Per-kernel terms that do not depend on the query point: the sum of
    /// numeric normalizers for each centre.
    fn offsets(&self, side: Side) -> Vec<f64> {
        let (points, bws) = self.side(side);
        points
            .iter()
            .map(|center| {
                self.kinds
                    .iter()
                    .enumerate()
                    .filter(|(_, k)| !matches!(k, DimensionKind::Categorical { .. }))
                    .map(|(j, _)| log_truncated_gauss(center[j], center[j], bws[j]))
                    .sum()
            })
            .collect()
    }

    fn log_density_with(&self, side: Side, offsets: &[f64], point: &[f64]) -> f64 {
        let (points, bws) = self.side(side);
        let terms: Vec<f64> = points
            .iter()
            .zip(offsets)
            .map(|(center, offset)| {
                let mut t = *offset;
                for (j, kind) in self.kinds.iter().enumerate() {
                    t += match kind {
                        DimensionKind::Categorical { levels } => {
                            log_aitchison_aitken(point[j], center[j], bws[j], *levels)
                        }
                        _ => {
                            let z = (point[j] - center[j]) / bws[j];
                            -0.5 * z * z
                        }
                    };
                }
                t
            })
            .collect();
        log_sum_exp(&terms) - (points.len() as f64).ln()
    }

    fn acquisition(&self, point: &[f64], good: &[f64], bad: &[f64]) -> f64 {
        let score = self.log_density_with(Side::Good, good, point) - self.log_density_with(Side::Bad, bad, point);
        if score.is_nan() {
            f64::NEG_INFINITY
        } else {
            score
        }
    }

    fn draw<R: Rng + ?Sized>(&self, bandwidth_factor: f64, rng: &mut R) -> Vec<f64> {
        let center = &self.good_points[rng.gen_range(0..self.good_points.len())];
        self.kinds
            .iter()
            .enumerate()
            .map(|(j, kind)| {
                let bw = self.good_bandwidths[j];
                match kind {
                    DimensionKind::Categorical { levels } => {
                        if rng.gen::<f64>() < 1.0 - bw {
                            center[j]
                        } else {
                            rng.gen_range(0..(*levels).max(1)) as f64
                        }
                    }
                    _ => sample_truncated_normal(center[j], bw * bandwidth_factor, rng),
                }
            })
            .collect()
    }

    /// Draws `n_samples` candidates from the widened good density and returns
    /// the one with the highest good/bad log-density ratio.
    pub fn propose<R: Rng + ?Sized>(&self, n_samples: usize, bandwidth_factor: f64, rng: &mut R) -> Vec<f64> {
        let mut best = self.draw(bandwidth_factor, rng);
        if n_samples <= 1 {
            return best;
        }
        let good = self.offsets(Side::Good);
        let bad = self.offsets(Side::Bad);
        let mut best_score = self.acquisition(&best, &good, &bad);
        for _ in 1..n_samples {
            let candidate = self.draw(bandwidth_factor, rng);
            let score = self.acquisition(&candidate, &good, &bad);
            if score > best_score {
                best = candidate;
                best_score = score;
            }
        }
        best
    }
}

fn sample_truncated_normal<R: Rng + ?Sized>(center: f64, sd: f64, rng: &mut R) -> f64 {
    let unit = Normal::new(0.0, 1.0).expect("standard normal");
    let lo = unit.cdf(-center / sd);
    let hi = unit.cdf((1.0 - center) / sd);
    let u = lo + rng.gen::<f64>() * (hi - lo);
    if !(u > 0.0 && u < 1.0) {
        return center.clamp(0.0, 1.0);
    }
    (center + sd * unit.inverse_cdf(u)).clamp(0.0, 1.0)
}
