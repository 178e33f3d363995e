//! First-order functional ANOVA on forest partitions and local parameter
//! importance around an incumbent.

use serde::{Deserialize, Serialize};

use super::forest::{Forest, LeafBox, Tree};
use super::AnalysisError;
use crate::configspace::{Configuration, ConfigurationSpace, DimensionKind, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Fanova,
    Lpi,
}

impl ImportanceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fanova => "fanova",
            Self::Lpi => "lpi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceReport {
    pub method: ImportanceMethod,
    pub budget: Option<u64>,
    /// One score per hyperparameter, in space order.
    pub names: Vec<String>,
    pub scores: Vec<f64>,
    /// Set when every variance was zero.
    pub degenerate: bool,
}

impl ImportanceReport {
    /// Long-format rows `hyperparameter,budget,importance,method`.
    pub fn csv_rows(&self) -> Vec<String> {
        let budget = self.budget.map(|b| b.to_string()).unwrap_or_default();
        self.names
            .iter()
            .zip(&self.scores)
            .map(|(n, s)| format!("{},{budget},{s:?},{}", csv_field(n), self.method.as_str()))
            .collect()
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Input domain of each encoded coordinate: numeric coordinates span
/// [0, 1], choice coordinates span one unit per level.
pub fn encoding_bounds(kinds: &[DimensionKind]) -> Vec<(f64, f64)> {
    kinds
        .iter()
        .map(|k| match k {
            DimensionKind::Categorical { levels } => (-0.5, *levels as f64 - 0.5),
            _ => (0.0, 1.0),
        })
        .collect()
}

fn box_fractions(b: &LeafBox, bounds: &[(f64, f64)]) -> Vec<f64> {
    b.lo.iter()
        .zip(&b.hi)
        .zip(bounds)
        .map(|((l, h), (bl, bh))| ((h - l) / (bh - bl)).max(0.0))
        .collect()
}

/// Fraction of one tree's variance explained by each single coordinate, or
/// `None` when the tree is constant over the domain.
pub fn tree_first_order(tree: &Tree, bounds: &[(f64, f64)]) -> Option<Vec<f64>> {
    let boxes = tree.leaf_boxes(bounds);
    let fracs: Vec<Vec<f64>> = boxes.iter().map(|b| box_fractions(b, bounds)).collect();
    let vols: Vec<f64> = fracs.iter().map(|f| f.iter().product()).collect();
    let mean: f64 = boxes.iter().zip(&vols).map(|(b, v)| v * b.value).sum();
    let total: f64 = boxes.iter().zip(&vols).map(|(b, v)| v * (b.value - mean).powi(2)).sum();
    if total <= 1e-15 * (1.0 + mean * mean) {
        return None;
    }
    let d = bounds.len();
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let mut cuts: Vec<f64> = boxes.iter().flat_map(|b| [b.lo[j], b.hi[j]]).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let width = bounds[j].1 - bounds[j].0;
        let mut var_j = 0.0;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            // marginal prediction on this slab: leaves covering it, weighted
            // by their extent in the other coordinates
            let marginal: f64 = boxes
                .iter()
                .zip(&fracs)
                .zip(&vols)
                .filter(|((bx, _), _)| bx.lo[j] <= mid && mid < bx.hi[j])
                .map(|((bx, f), v)| bx.value * if f[j] > 0.0 { v / f[j] } else { 0.0 })
                .sum();
            var_j += (b - a) / width * (marginal - mean).powi(2);
        }
        out.push((var_j / total).clamp(0.0, 1.0));
    }
    Some(out)
}

/// Mean over trees of the per-coordinate first-order variance fractions.
/// Constant trees contribute zeros.
pub fn fanova_first_order(forest: &Forest, bounds: &[(f64, f64)]) -> Vec<f64> {
    let mut sum = vec![0.0; bounds.len()];
    for tree in &forest.trees {
        if let Some(f) = tree_first_order(tree, bounds) {
            for (s, v) in sum.iter_mut().zip(f) {
                *s += v;
            }
        }
    }
    let n = forest.trees.len().max(1) as f64;
    sum.iter().map(|s| s / n).collect()
}

/// fANOVA report over a configuration space's encoding.
pub fn fanova_report(forest: &Forest, space: &ConfigurationSpace, budget: Option<u64>) -> ImportanceReport {
    let scores = fanova_first_order(forest, &encoding_bounds(&space.dimension_kinds()));
    ImportanceReport {
        method: ImportanceMethod::Fanova,
        budget,
        names: space.hyperparameters().iter().map(|h| h.name.clone()).collect(),
        degenerate: scores.iter().all(|s| *s == 0.0),
        scores,
    }
}

/// Grid over one coordinate: `grid_size` evenly spaced unit values for
/// numeric hyperparameters, every choice index otherwise.
fn coordinate_grid(space: &ConfigurationSpace, j: usize, grid_size: usize) -> Vec<f64> {
    let hp = &space.hyperparameters()[j];
    match (&hp.domain, hp.n_choices()) {
        (Domain::Categorical(_) | Domain::Bool, Some(n)) => (0..n).map(|i| i as f64).collect(),
        _ => (0..grid_size).map(|i| i as f64 / (grid_size - 1) as f64).collect(),
    }
}

/// Local parameter importance: the variance of `f` along each active
/// hyperparameter with the others frozen at the incumbent, normalized by the
/// sum over active hyperparameters. Inactive hyperparameters score 0.
pub fn lpi(
    f: &dyn Fn(&[f64]) -> f64,
    space: &ConfigurationSpace,
    incumbent: &Configuration,
    grid_size: usize,
    budget: Option<u64>,
) -> Result<ImportanceReport, AnalysisError> {
    if grid_size < 3 {
        return Err(AnalysisError::GridTooSmall(grid_size));
    }
    let incumbent = space.validate(incumbent)?;
    let base = space.to_unit_cube(&incumbent)?;
    let names: Vec<String> = space.hyperparameters().iter().map(|h| h.name.clone()).collect();
    let mut variances = vec![0.0; names.len()];
    let mut active = vec![false; names.len()];
    for (j, name) in names.iter().enumerate() {
        if incumbent.get(name).is_none() {
            continue;
        }
        active[j] = true;
        let values: Vec<f64> = coordinate_grid(space, j, grid_size)
            .into_iter()
            .map(|g| {
                let mut u = base.clone();
                u[j] = g;
                f(&u)
            })
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        variances[j] = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    }
    let total: f64 = variances.iter().sum();
    let n_active = active.iter().filter(|a| **a).count();
    let (scores, degenerate) = if total > 0.0 {
        (variances.iter().map(|v| v / total).collect(), false)
    } else {
        let uniform = 1.0 / n_active.max(1) as f64;
        (active.iter().map(|&a| if a { uniform } else { 0.0 }).collect(), true)
    };
    Ok(ImportanceReport {
        method: ImportanceMethod::Lpi,
        budget,
        names,
        scores,
        degenerate,
    })
}
