//! Budget ladder, Hyperband brackets and SuccessiveHalving promotion.

use serde::{Deserialize, Serialize};

use super::OptimizerError;

/// Geometric sequence of integer budgets ending at `b_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLadder {
    pub b_min: u64,
    pub b_max: u64,
    pub eta: f64,
    pub rungs: Vec<u64>,
}

/// Rungs are `b_max / eta^k` for `k = K..0`, `K = floor(log_eta(b_max / b_min))`,
/// each rounded to the nearest integer (ties to even) and at least 1.
pub fn budget_ladder(b_min: u64, b_max: u64, eta: f64) -> Result<BudgetLadder, OptimizerError> {
    if b_min == 0 || b_min > b_max {
        return Err(OptimizerError::InvalidLadder(format!(
            "need 0 < b_min <= b_max, got b_min={b_min}, b_max={b_max}"
        )));
    }
    if !(eta.is_finite() && eta > 1.0) {
        return Err(OptimizerError::InvalidLadder(format!("eta must exceed 1, got {eta}")));
    }
    let ratio = b_max as f64 / b_min as f64;
    // guards against log(8)/log(2) = 2.9999999999999996
    let k_max = ((ratio.ln() / eta.ln()) + 1e-9).floor() as i32;
    let mut rungs: Vec<u64> = (0..=k_max)
        .rev()
        .map(|k| ((b_max as f64 / eta.powi(k)).round_ties_even() as u64).max(1))
        .collect();
    rungs.dedup();
    Ok(BudgetLadder {
        b_min,
        b_max,
        eta,
        rungs,
    })
}

impl BudgetLadder {
    /// Largest bracket index.
    pub fn s_max(&self) -> usize {
        self.rungs.len() - 1
    }

    pub fn contains(&self, budget: u64) -> bool {
        self.rungs.contains(&budget)
    }
}

/// One SuccessiveHalving run: how many configurations enter each rung and at
/// which budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub index: usize,
    pub rung_sizes: Vec<usize>,
    pub rung_budgets: Vec<u64>,
}

/// Number of survivors of a rung of `n`: `floor(n / eta)`, at least 1.
pub fn promotion_count(n: usize, eta: f64) -> usize {
    ((n as f64 / eta + 1e-9).floor() as usize).max(1)
}

/// Hyperband bracket `s`: starts at `rungs[s_max - s]` with
/// `n = ceil((s_max + 1) * eta^s / (s + 1))` configurations.
pub fn bracket_plan(ladder: &BudgetLadder, s: usize) -> Result<Bracket, OptimizerError> {
    let s_max = ladder.s_max();
    if s > s_max {
        return Err(OptimizerError::BracketOutOfRange { s, s_max });
    }
    let n = ((s_max + 1) as f64 * ladder.eta.powi(s as i32) / (s + 1) as f64 - 1e-9).ceil() as usize;
    Ok(sized_bracket(ladder, s, n.max(1)))
}

/// Bracket `s` with a given initial rung size; later rungs follow the
/// promotion rule.
pub(crate) fn sized_bracket(ladder: &BudgetLadder, s: usize, n0: usize) -> Bracket {
    let s_max = ladder.s_max();
    let mut rung_sizes = vec![n0];
    for _ in 0..s {
        let last = *rung_sizes.last().expect("non-empty");
        rung_sizes.push(promotion_count(last, ladder.eta));
    }
    Bracket {
        index: s,
        rung_sizes,
        rung_budgets: ladder.rungs[s_max - s..].to_vec(),
    }
}

/// One finished evaluation in a rung, in submission order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RungEntry {
    pub config_id: u64,
    pub loss: f64,
    pub crashed: bool,
}

/// Keeps `floor(n / eta)` (at least 1) entries. Crashed entries rank after
/// all finished ones; equal losses keep submission order.
pub fn promote(entries: &[RungEntry], eta: f64) -> Result<Vec<u64>, OptimizerError> {
    if entries.is_empty() {
        return Err(OptimizerError::EmptyRung);
    }
    let keep = promotion_count(entries.len(), eta);
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&entries[a], &entries[b]);
        x.crashed
            .cmp(&y.crashed)
            .then(x.loss.total_cmp(&y.loss))
            .then(a.cmp(&b))
    });
    Ok(order[..keep].iter().map(|&i| entries[i].config_id).collect())
}

/// [`promote`] for `(config_id, loss)` pairs without crash flags.
pub fn sh_promote(results: &[(u64, f64)], eta: f64) -> Result<Vec<u64>, OptimizerError> {
    let entries: Vec<RungEntry> = results
        .iter()
        .map(|&(config_id, loss)| RungEntry {
            config_id,
            loss,
            crashed: false,
        })
        .collect();
    promote(&entries, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ladders() {
        assert_eq!(budget_ladder(12, 50, 2.0).unwrap().rungs, vec![12, 25, 50]);
        assert_eq!(budget_ladder(50, 50, 3.0).unwrap().rungs, vec![50]);
        assert_eq!(budget_ladder(25, 200, 2.0).unwrap().rungs, vec![25, 50, 100, 200]);
        assert_eq!(budget_ladder(1, 81, 3.0).unwrap().rungs, vec![1, 3, 9, 27, 81]);
        assert!(budget_ladder(0, 5, 2.0).is_err());
        assert!(budget_ladder(6, 5, 2.0).is_err());
        assert!(budget_ladder(1, 5, 1.0).is_err());
    }

    #[test]
    fn brackets() {
        let ladder = budget_ladder(12, 50, 2.0).unwrap();
        let b2 = bracket_plan(&ladder, 2).unwrap();
        assert_eq!(b2.rung_sizes, vec![4, 2, 1]);
        assert_eq!(b2.rung_budgets, vec![12, 25, 50]);
        let b1 = bracket_plan(&ladder, 1).unwrap();
        assert_eq!(b1.rung_sizes, vec![3, 1]);
        assert_eq!(b1.rung_budgets, vec![25, 50]);
        let b0 = bracket_plan(&ladder, 0).unwrap();
        assert_eq!(b0.rung_sizes, vec![3]);
        assert_eq!(b0.rung_budgets, vec![50]);
        assert!(bracket_plan(&ladder, 3).is_err());
        let flat = budget_ladder(50, 50, 3.0).unwrap();
        assert_eq!(bracket_plan(&flat, 0).unwrap().rung_sizes, vec![1]);
    }

    #[test]
    fn promotion_examples() {
        assert_eq!(
            sh_promote(&[(0, 0.3), (1, 0.1), (2, 0.2), (3, 0.4)], 2.0).unwrap(),
            vec![1, 2]
        );
        assert_eq!(sh_promote(&[(9, 0.3)], 2.0).unwrap(), vec![9]);
        assert_eq!(
            sh_promote(&[(5, 0.1), (6, 0.1), (7, 0.5), (8, 0.6)], 2.0).unwrap(),
            vec![5, 6]
        );
        assert!(sh_promote(&[], 2.0).is_err());
        let crashed = [
            RungEntry {
                config_id: 0,
                loss: 1.0,
                crashed: true,
            },
            RungEntry {
                config_id: 1,
                loss: 1.0,
                crashed: false,
            },
        ];
        assert_eq!(promote(&crashed, 2.0).unwrap(), vec![1]);
    }

    proptest! {
        #[test]
        fn ladder_properties(b_min in 1u64..200, extra in 0u64..2000, eta in 1.5f64..4.0) {
            let l = budget_ladder(b_min, b_min + extra, eta).unwrap();
            prop_assert_eq!(*l.rungs.last().unwrap(), b_min + extra);
            prop_assert!(l.rungs.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(l.rungs[0] >= 1);
        }

        #[test]
        fn promotion_keeps_floor(losses in proptest::collection::vec(0.0f64..1.0, 1..40), eta in 2u32..5) {
            let results: Vec<(u64, f64)> = losses.iter().enumerate().map(|(i, l)| (i as u64, *l)).collect();
            let kept = sh_promote(&results, eta as f64).unwrap();
            prop_assert_eq!(kept.len(), (losses.len() / eta as usize).max(1));
            let worst_kept = kept.iter().map(|&i| losses[i as usize]).fold(f64::MIN, f64::max);
            let best_dropped = (0..losses.len() as u64)
                .filter(|i| !kept.contains(i))
                .map(|i| losses[i as usize])
                .fold(f64::MAX, f64::min);
            prop_assert!(worst_kept <= best_dropped);
        }
    }
}
