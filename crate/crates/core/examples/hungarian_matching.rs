//! Minimum-cost assignment between predictions and targets.

use dsod::detection::{hungarian_match, match_cost, BBox, Label, LossWeights, Prediction};

fn main() {
    let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
    let m = hungarian_match(&cost);
    println!("square: pairs {:?}, cost {}", m.pairs, m.total_cost(&cost));

    let preds: Vec<Prediction> = [(0.2, 0.2, [0.9, 0.1]), (0.7, 0.7, [0.2, 0.8]), (0.5, 0.2, [0.5, 0.5])]
        .iter()
        .map(|&(cx, cy, p)| Prediction {
            bbox: BBox::new(cx, cy, 0.2, 0.2),
            class_probs: p.to_vec(),
        })
        .collect();
    let targets = [
        Label { class_id: 1, bbox: BBox::new(0.68, 0.72, 0.2, 0.2) },
        Label { class_id: 0, bbox: BBox::new(0.22, 0.2, 0.2, 0.2) },
    ];
    let cost = match_cost(&preds, &targets, &LossWeights::default());
    let m = hungarian_match(&cost);
    println!("detection: pairs {:?}, unmatched predictions {:?}", m.pairs, m.unmatched_preds);
}
