use dsod::detection::{hungarian_match, match_cost, BBox, Label, LossWeights, Prediction};
use proptest::prelude::*;

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn rec(cost: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                rec(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; cost[0].len()], 0.0, &mut best);
    best
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, cols), rows)
}

proptest! {
    #[test]
    fn rectangular_matches_are_optimal((rows, cols) in (1usize..5, 0usize..3), seed in any::<u64>()) {
        let cols = rows + cols;
        let mut rng = seed;
        let cost: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64
        }).collect()).collect();
        let m = hungarian_match(&cost);
        prop_assert_eq!(m.pairs.len(), rows);
        prop_assert!((m.total_cost(&cost) - brute_force(&cost)).abs() < 1e-9);
    }

    #[test]
    fn permuting_rows_permutes_the_assignment(cost in matrix(5, 5), shift in 1usize..5) {
        let base = hungarian_match(&cost).total_cost(&cost);
        let rotated: Vec<Vec<f64>> = (0..5).map(|i| cost[(i + shift) % 5].clone()).collect();
        let again = hungarian_match(&rotated).total_cost(&rotated);
        prop_assert!((base - again).abs() < 1e-9);
    }

    #[test]
    fn each_column_used_at_most_once(cost in matrix(4, 6)) {
        let m = hungarian_match(&cost);
        let mut cols: Vec<usize> = m.pairs.iter().map(|&(_, c)| c).collect();
        cols.sort_unstable();
        cols.dedup();
        prop_assert_eq!(cols.len(), m.pairs.len());
    }
}

#[test]
fn detection_cost_prefers_the_overlapping_correct_class() {
    let preds: Vec<Prediction> = [(0.25, [0.9, 0.1]), (0.75, [0.1, 0.9])]
        .iter()
        .map(|&(cx, p)| Prediction {
            bbox: BBox::new(cx, 0.5, 0.2, 0.2),
            class_probs: p.to_vec(),
        })
        .collect();
    let targets = [
        Label { class_id: 1, bbox: BBox::new(0.74, 0.5, 0.2, 0.2) },
        Label { class_id: 0, bbox: BBox::new(0.26, 0.5, 0.2, 0.2) },
    ];
    let cost = match_cost(&preds, &targets, &LossWeights::default());
    let m = hungarian_match(&cost);
    assert_eq!(m.target_of(0), Some(1));
    assert_eq!(m.target_of(1), Some(0));
}
