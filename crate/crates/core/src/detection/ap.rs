use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::boxes::{iou, Detection, Label};

pub const AP_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    /// `None` for classes without ground truth.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes that have ground truth; 0 when none do.
    pub map: f64,
}

/// All-point interpolated area under the precision/recall curve.
fn interpolated_ap(tp: &[bool], n_gt: usize) -> f64 {
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        if t {
            hits += 1;
        }
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (k + 1) as f64);
    }
    // precision envelope from the right
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        if *r > prev_r {
            ap += (r - prev_r) * p;
            prev_r = *r;
        }
    }
    ap
}

/// Canonical ordering: score descending, then box coordinates, so the curve
/// does not depend on image presentation order.
fn rank(a: &(usize, Detection), b: &(usize, Detection)) -> Ordering {
    b.1.score
        .partial_cmp(&a.1.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| {
            a.1.bbox
                .as_array()
                .partial_cmp(&b.1.bbox.as_array())
                .unwrap_or(Ordering::Equal)
        })
}

/// VOC-style AP at IoU 0.5 for each class, with greedy matching of
/// score-sorted predictions to still-unmatched ground truths.
pub fn ap50(preds: &[Vec<Detection>], gts: &[Vec<Label>], num_classes: usize) -> ApReport {
    let mut per_class = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let n_gt: usize = gts
            .iter()
            .map(|g| g.iter().filter(|l| l.class_id == class).count())
            .sum();
        if n_gt == 0 {
            per_class.push(None);
            continue;
        }
        let mut cands: Vec<(usize, Detection)> = preds
            .iter()
            .enumerate()
            .flat_map(|(img, ds)| {
                ds.iter()
                    .filter(|d| d.class_id == class)
                    .map(move |d| (img, *d))
            })
            .collect();
        cands.sort_by(rank);

        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let tp: Vec<bool> = cands
            .iter()
            .map(|(img, d)| {
                let Some(img_gts) = gts.get(*img) else {
                    return false;
                };
                let mut best: Option<(usize, f64)> = None;
                for (j, g) in img_gts.iter().enumerate() {
                    if g.class_id != class || used[*img][j] {
                        continue;
                    }
                    let v = iou(&d.bbox, &g.bbox);
                    if v >= AP_IOU && best.is_none_or(|(_, b)| v > b) {
                        best = Some((j, v));
                    }
                }
                match best {
                    Some((j, _)) => {
                        used[*img][j] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect();
        per_class.push(Some(interpolated_ap(&tp, n_gt)));
    }
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if valid.is_empty() {
        0.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    ApReport { per_class, map }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::BBox;

    fn det(b: BBox, score: f64) -> Detection {
        Detection {
            bbox: b,
            class_id: 0,
            score,
        }
    }

    fn label(b: BBox) -> Label {
        Label {
            class_id: 0,
            bbox: b,
        }
    }

    #[test]
    fn exact_hit_and_miss() {
        let g = BBox::new(0.5, 0.5, 0.2, 0.2);
        let r = ap50(&[vec![det(g, 0.9)]], &[vec![label(g)]], 1);
        assert_eq!(r.map, 1.0);
        let far = BBox::new(0.1, 0.1, 0.05, 0.05);
        let r = ap50(&[vec![det(far, 0.9)]], &[vec![label(g)]], 1);
        assert_eq!(r.map, 0.0);
    }

    #[test]
    fn hit_miss_hit_curve() {
        let g1 = BBox::new(0.2, 0.2, 0.2, 0.2);
        let g2 = BBox::new(0.7, 0.7, 0.2, 0.2);
        let miss = BBox::new(0.2, 0.8, 0.1, 0.1);
        let preds = vec![vec![det(g1, 0.9), det(miss, 0.8), det(g2, 0.7)]];
        let r = ap50(&preds, &[vec![label(g1), label(g2)]], 1);
        assert!((r.map - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn classes_without_gt_excluded() {
        let g = BBox::new(0.5, 0.5, 0.2, 0.2);
        let r = ap50(&[vec![det(g, 0.9)]], &[vec![label(g)]], 3);
        assert_eq!(r.per_class, vec![Some(1.0), None, None]);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn empty_predictions_score_zero() {
        let g = BBox::new(0.5, 0.5, 0.2, 0.2);
        let r = ap50(&[vec![]], &[vec![label(g)]], 1);
        assert_eq!(r.map, 0.0);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let g = BBox::new(0.5, 0.5, 0.2, 0.2);
        let r = ap50(&[vec![det(g, 0.9), det(g, 0.8)]], &[vec![label(g)]], 1);
        assert_eq!(r.map, 1.0);
        let r = ap50(
            &[vec![det(g, 0.9), det(g, 0.8)]],
            &[vec![label(g), label(BBox::new(0.1, 0.1, 0.1, 0.1))]],
            1,
        );
        assert!((r.map - 0.5).abs() < 1e-12);
    }
}
