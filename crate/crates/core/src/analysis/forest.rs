//! Bootstrap forest of variance-reduction regression trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestSettings {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestSettings {
    fn default() -> Self {
        Self {
            n_trees: 32,
            max_depth: 32,
            min_leaf: 3,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Axis-aligned cell of a tree's partition of the input domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub value: f64,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Leaves as boxes clipped to `bounds`.
    pub fn leaf_boxes(&self, bounds: &[(f64, f64)]) -> Vec<LeafBox> {
        let mut out = Vec::new();
        let mut stack = vec![(
            0usize,
            bounds.iter().map(|b| b.0).collect::<Vec<_>>(),
            bounds.iter().map(|b| b.1).collect::<Vec<_>>(),
        )];
        while let Some((i, lo, hi)) = stack.pop() {
            match &self.nodes[i] {
                Node::Leaf { value } => out.push(LeafBox { lo, hi, value: *value }),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let t = threshold.clamp(lo[*feature], hi[*feature]);
                    let mut left_hi = hi.clone();
                    left_hi[*feature] = t;
                    let mut right_lo = lo.clone();
                    right_lo[*feature] = t;
                    stack.push((*right, right_lo, hi));
                    stack.push((*left, lo, left_hi));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Out-of-bag root mean squared error; `None` without bootstrap or when
    /// no sample is ever out of bag.
    pub oob_rmse: Option<f64>,
}

impl Forest {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    settings: ForestSettings,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn mean(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64
    }

    /// Best (feature, threshold) by summed squared error; ties keep the
    /// lower feature and threshold.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64)> {
        let n = idx.len();
        let min_leaf = self.settings.min_leaf.max(1);
        if n < 2 * min_leaf {
            return None;
        }
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let parent_sse = total_sq - total * total / n as f64;
        if parent_sse <= 1e-14 * (1.0 + total_sq) {
            return None;
        }
        let d = self.x[idx[0]].len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..d {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let (mut sum_l, mut sq_l) = (0.0, 0.0);
            for k in 0..n - 1 {
                let yk = self.y[order[k]];
                sum_l += yk;
                sq_l += yk * yk;
                let n_l = k + 1;
                let n_r = n - n_l;
                if n_l < min_leaf || n_r < min_leaf {
                    continue;
                }
                let (a, b) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if a == b {
                    continue;
                }
                let sum_r = total - sum_l;
                let sq_r = total_sq - sq_l;
                let sse = (sq_l - sum_l * sum_l / n_l as f64) + (sq_r - sum_r * sum_r / n_r as f64);
                if best.is_none_or(|(s, _, _)| sse < s - 1e-12 * parent_sse.abs()) {
                    best = Some((sse, f, 0.5 * (a + b)));
                }
            }
        }
        best.filter(|(sse, _, _)| *sse < parent_sse).map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: self.mean(&idx) });
        if depth >= self.settings.max_depth {
            return at;
        }
        if let Some((feature, threshold)) = self.best_split(&idx) {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
            let left = self.grow(l, depth + 1);
            let right = self.grow(r, depth + 1);
            self.nodes[at] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
        }
        at
    }
}

/// Fits `n_trees` regression trees on bootstrap resamples of `(x, y)`.
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], settings: ForestSettings, seed: u64) -> Result<Forest, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFewSamples { got: x.len(), need: 2 });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(settings.n_trees);
    let mut oob_sum = vec![0.0; n];
    let mut oob_count = vec![0usize; n];
    for _ in 0..settings.n_trees.max(1) {
        let idx: Vec<usize> = if settings.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut builder = Builder {
            x,
            y,
            settings,
            nodes: Vec::new(),
        };
        let mut in_bag = vec![false; n];
        for &i in &idx {
            in_bag[i] = true;
        }
        builder.grow(idx, 0);
        let tree = Tree { nodes: builder.nodes };
        for i in (0..n).filter(|&i| !in_bag[i]) {
            oob_sum[i] += tree.predict(&x[i]);
            oob_count[i] += 1;
        }
        trees.push(tree);
    }
    let oob: Vec<f64> = (0..n)
        .filter(|&i| oob_count[i] > 0)
        .map(|i| (oob_sum[i] / oob_count[i] as f64 - y[i]).powi(2))
        .collect();
    let oob_rmse = (settings.bootstrap && !oob.is_empty()).then(|| (oob.iter().sum::<f64>() / oob.len() as f64).sqrt());
    Ok(Forest { trees, oob_rmse })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.gen()).collect()).collect()
    }

    #[test]
    fn constant_target() {
        let x = uniform(40, 2, 1);
        let f = fit_forest(&x, &[3.0; 40], ForestSettings::default(), 0).unwrap();
        assert!(x.iter().all(|p| f.predict(p) == 3.0));
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn linear_target_fits() {
        let x = uniform(500, 2, 2);
        let y: Vec<f64> = x.iter().map(|p| p[0]).collect();
        let f = fit_forest(&x, &y, ForestSettings::default(), 3).unwrap();
        assert!(f.oob_rmse.unwrap() < 0.05, "{:?}", f.oob_rmse);
        let g = fit_forest(&x, &y, ForestSettings::default(), 3).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn boxes_tile_the_domain() {
        let x = uniform(200, 3, 4);
        let y: Vec<f64> = x.iter().map(|p| p[0] * p[1] + p[2]).collect();
        let f = fit_forest(&x, &y, ForestSettings::default(), 5).unwrap();
        let bounds = vec![(0.0, 1.0); 3];
        for t in &f.trees {
            let boxes = t.leaf_boxes(&bounds);
            let vol: f64 = boxes
                .iter()
                .map(|b| b.lo.iter().zip(&b.hi).map(|(l, h)| h - l).product::<f64>())
                .sum();
            assert!((vol - 1.0).abs() < 1e-9);
            for b in &boxes {
                let mid: Vec<f64> = b.lo.iter().zip(&b.hi).map(|(l, h)| 0.5 * (l + h)).collect();
                if b.lo.iter().zip(&b.hi).all(|(l, h)| h > l) {
                    assert_eq!(t.predict(&mid), b.value);
                }
            }
        }
    }
}
