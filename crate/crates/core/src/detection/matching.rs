//! Minimum-cost one-to-one assignment (Kuhn–Munkres with potentials).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(prediction index, target index)`, sorted by prediction index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_preds: Vec<usize>,
}

impl MatchResult {
    pub fn total_cost(&self, cost: &[Vec<f64>]) -> f64 {
        self.pairs.iter().map(|&(i, j)| cost[i][j]).sum()
    }

    pub fn target_of(&self, pred: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(p, _)| p == pred).map(|&(_, t)| t)
    }
}

/// Assigns rows to columns of an `n ≤ m` cost matrix; returns the column of
/// each row. Column scans go in index order with strict improvement, so ties
/// resolve toward lower column indices.
fn solve_rows_le_cols(cost: &[Vec<f64>], n: usize, m: usize) -> Vec<usize> {
    const INF: f64 = f64::INFINITY;
    // 1-based arrays; index 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Optimal matching for a `n_pred × n_tgt` cost matrix. Exactly
/// `min(n_pred, n_tgt)` pairs are produced.
pub fn hungarian_match(cost: &[Vec<f64>]) -> MatchResult {
    let n_pred = cost.len();
    let n_tgt = cost.first().map_or(0, Vec::len);
    if n_pred == 0 || n_tgt == 0 {
        return MatchResult {
            pairs: vec![],
            unmatched_preds: (0..n_pred).collect(),
        };
    }
    let mut pairs: Vec<(usize, usize)> = if n_pred <= n_tgt {
        solve_rows_le_cols(cost, n_pred, n_tgt)
            .into_iter()
            .enumerate()
            .collect()
    } else {
        let transposed: Vec<Vec<f64>> = (0..n_tgt)
            .map(|j| (0..n_pred).map(|i| cost[i][j]).collect())
            .collect();
        solve_rows_le_cols(&transposed, n_tgt, n_pred)
            .into_iter()
            .enumerate()
            .map(|(t, p)| (p, t))
            .collect()
    };
    pairs.sort_unstable();
    let mut matched = vec![false; n_pred];
    for &(p, _) in &pairs {
        matched[p] = true;
    }
    MatchResult {
        pairs,
        unmatched_preds: (0..n_pred).filter(|&i| !matched[i]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_antidiagonal() {
        let c = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let r = hungarian_match(&c);
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(r.total_cost(&c), 2.0);

        let c = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = hungarian_match(&c);
        assert_eq!(r.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(r.total_cost(&c), 0.0);
    }

    #[test]
    fn empty_matrix() {
        let r = hungarian_match(&[]);
        assert!(r.pairs.is_empty());
        let r = hungarian_match(&[vec![], vec![]]);
        assert!(r.pairs.is_empty());
        assert_eq!(r.unmatched_preds, vec![0, 1]);
    }

    #[test]
    fn rectangular_both_ways() {
        let tall = vec![vec![5.0, 1.0], vec![1.0, 5.0], vec![0.5, 0.6]];
        let r = hungarian_match(&tall);
        assert_eq!(r.pairs.len(), 2);
        assert!((r.total_cost(&tall) - 1.5).abs() < 1e-12);
        assert_eq!(r.unmatched_preds.len(), 1);

        let wide = vec![vec![3.0, 1.0, 2.0]];
        let r = hungarian_match(&wide);
        assert_eq!(r.pairs, vec![(0, 1)]);
    }

    #[test]
    fn ties_prefer_lower_prediction_index() {
        let c = vec![vec![1.0], vec![1.0], vec![1.0]];
        let r = hungarian_match(&c);
        assert_eq!(r.pairs, vec![(0, 0)]);
    }
}
