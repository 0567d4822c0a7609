//! Set-prediction detection losses: sigmoid focal classification, L1 + GIoU
//! box regression, Hungarian assignment, and soft binary cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

use super::boxes::{giou, BBox, Label, Prediction};
use super::matching::{hungarian_match, MatchResult};

pub const PROB_CLAMP: f64 = 1e-7;

/// Weights shared by the matching cost and the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 2.0,
            l1: 5.0,
            giou: 2.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Sigmoid focal loss on one probability, with the usual `α_t` balancing
/// (`α` for positives, `1 - α` for negatives).
pub fn focal_loss(pred_prob: f64, target: bool, alpha: f64, gamma: f64) -> f64 {
    let p = clamp_prob(pred_prob);
    let (pt, at) = if target { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

/// `-[t ln s + (1 - t) ln(1 - s)]` with `s` clamped away from 0 and 1.
pub fn bce_soft(student_prob: f64, teacher_prob: f64) -> f64 {
    let s = clamp_prob(student_prob);
    let t = teacher_prob;
    -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())
}

/// `w_l1 · Σ|Δ| + w_giou · (1 - giou)` over `(cx, cy, w, h)`.
pub fn bbox_loss(pred: &BBox, target: &BBox, w: &LossWeights) -> f64 {
    w.l1 * pred.l1(target) + w.giou * (1.0 - giou(pred, target))
}

/// Focal-style classification cost used for matching.
fn cls_cost(p: f64, w: &LossWeights) -> f64 {
    let (a, g) = (w.focal_alpha, w.focal_gamma);
    let pos = a * (1.0 - p).powf(g) * -(p + 1e-8).ln();
    let neg = (1.0 - a) * p.powf(g) * -(1.0 - p + 1e-8).ln();
    pos - neg
}

/// `n_pred × n_tgt` matching cost.
pub fn match_cost(preds: &[Prediction], targets: &[Label], w: &LossWeights) -> Vec<Vec<f64>> {
    preds
        .iter()
        .map(|p| {
            targets
                .iter()
                .map(|t| {
                    let prob = p.class_probs.get(t.class_id).copied().unwrap_or(0.0);
                    w.cls * cls_cost(prob, w)
                        + w.l1 * p.bbox.l1(&t.bbox)
                        + w.giou * (1.0 - giou(&p.bbox, &t.bbox))
                })
                .collect()
        })
        .collect()
}

/// Differentiable handles for one image's dense predictions.
#[derive(Debug, Clone, Copy)]
pub struct PredVars {
    /// `[M, C]` class logits.
    pub logits: Var,
    /// `[M, 4]` decoded `(cx, cy, w, h)`.
    pub boxes: Var,
}

impl PredVars {
    pub fn len(&self, g: &Graph) -> usize {
        g.shape(self.logits)[0]
    }

    pub fn is_empty(&self, g: &Graph) -> bool {
        self.len(g) == 0
    }

    /// Current values as plain predictions (no gradient).
    pub fn predictions(&self, g: &Graph) -> Vec<Prediction> {
        let logits = g.value(self.logits);
        let c = logits.shape()[1];
        let boxes = g.value(self.boxes).data();
        logits
            .data()
            .chunks(c)
            .zip(boxes.chunks(4))
            .map(|(l, b)| Prediction {
                bbox: BBox::new(b[0], b[1], b[2], b[3]),
                class_probs: l.iter().map(|&x| crate::tensor::sigmoid(x)).collect(),
            })
            .collect()
    }
}

/// Σ focal(sigmoid(logits), targets) over all entries.
pub fn graph_focal_sum(g: &mut Graph, logits: Var, targets: &Tensor, w: &LossWeights) -> Result<Var> {
    let t = targets.data();
    let sign = Tensor::new(targets.shape().to_vec(), t.iter().map(|&v| 2.0 * v - 1.0).collect())?;
    let base = Tensor::new(targets.shape().to_vec(), t.iter().map(|&v| 1.0 - v).collect())?;
    let alpha_t = Tensor::new(
        targets.shape().to_vec(),
        t.iter()
            .map(|&v| w.focal_alpha * v + (1.0 - w.focal_alpha) * (1.0 - v))
            .collect(),
    )?;
    let p = g.sigmoid(logits);
    let sign = g.constant(sign)?;
    let base = g.constant(base)?;
    let pt = g.mul(p, sign)?;
    let pt = g.add(pt, base)?;
    let pt = g.clamp(pt, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_pt = g.ln(pt)?;
    let one_minus = g.rsub(1.0, pt);
    let modulator = if w.focal_gamma == 2.0 {
        g.square(one_minus)
    } else {
        let l = g.ln(one_minus)?;
        let l = g.scale(l, w.focal_gamma);
        g.exp(l)
    };
    let alpha_t = g.constant(alpha_t)?;
    let weighted = g.mul(alpha_t, modulator)?;
    let per = g.mul(weighted, log_pt)?;
    let s = g.sum(per);
    Ok(g.neg(s))
}

/// Σ BCE(teacher, sigmoid(logits)) over all entries.
pub fn graph_bce_sum(g: &mut Graph, logits: Var, teacher: &Tensor) -> Result<Var> {
    let s = g.sigmoid(logits);
    let s = g.clamp(s, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let ln_s = g.ln(s)?;
    let one_minus = g.rsub(1.0, s);
    let ln_1ms = g.ln(one_minus)?;
    let t = g.constant(teacher.clone())?;
    let one_minus_t = g.constant(Tensor::new(
        teacher.shape().to_vec(),
        teacher.data().iter().map(|v| 1.0 - v).collect(),
    )?)?;
    let a = g.mul(t, ln_s)?;
    let b = g.mul(one_minus_t, ln_1ms)?;
    let both = g.add(a, b)?;
    let s = g.sum(both);
    Ok(g.neg(s))
}

/// Returns `(Σ L1, Σ (1 - giou))` between rows of a `[n, 4]` box variable and
/// constant target boxes.
pub fn graph_box_terms(g: &mut Graph, boxes: Var, targets: &[BBox]) -> Result<(Var, Var)> {
    let n = targets.len();
    let tdata: Vec<f64> = targets.iter().flat_map(|b| b.as_array()).collect();
    let tvar = g.constant(Tensor::new(vec![n, 4], tdata)?)?;

    let diff = g.sub(boxes, tvar)?;
    let abs = g.abs(diff);
    let l1 = g.sum(abs);

    // (cx, cy, w, h) → (x1, y1, x2, y2)
    #[rustfmt::skip]
    let to_xyxy = g.constant(Tensor::new(vec![4, 4], vec![
        1.0, 0.0, 1.0, 0.0,
        0.0, 1.0, 0.0, 1.0,
        -0.5, 0.0, 0.5, 0.0,
        0.0, -0.5, 0.0, 0.5,
    ])?)?;
    let pa = g.matmul(boxes, to_xyxy)?;
    let pb = g.matmul(tvar, to_xyxy)?;
    let col = |g: &mut Graph, v: Var, i: usize| g.slice_cols(v, i, i + 1);
    let (ax1, ay1, ax2, ay2) = (col(g, pa, 0)?, col(g, pa, 1)?, col(g, pa, 2)?, col(g, pa, 3)?);
    let (bx1, by1, bx2, by2) = (col(g, pb, 0)?, col(g, pb, 1)?, col(g, pb, 2)?, col(g, pb, 3)?);

    let extent = |g: &mut Graph, lo: Var, hi: Var| g.sub(hi, lo);
    let ix2 = g.minimum(ax2, bx2)?;
    let ix1 = g.maximum(ax1, bx1)?;
    let iy2 = g.minimum(ay2, by2)?;
    let iy1 = g.maximum(ay1, by1)?;
    let iw = extent(g, ix1, ix2)?;
    let iw = g.relu(iw);
    let ih = extent(g, iy1, iy2)?;
    let ih = g.relu(ih);
    let inter = g.mul(iw, ih)?;

    let aw = extent(g, ax1, ax2)?;
    let ah = extent(g, ay1, ay2)?;
    let area_a = g.mul(aw, ah)?;
    let bw = extent(g, bx1, bx2)?;
    let bh = extent(g, by1, by2)?;
    let area_b = g.mul(bw, bh)?;
    let union = g.add(area_a, area_b)?;
    let union = g.sub(union, inter)?;
    let iou = g.div(inter, union)?;

    let ex2 = g.maximum(ax2, bx2)?;
    let ex1 = g.minimum(ax1, bx1)?;
    let ey2 = g.maximum(ay2, by2)?;
    let ey1 = g.minimum(ay1, by1)?;
    let ew = extent(g, ex1, ex2)?;
    let eh = extent(g, ey1, ey2)?;
    let enclosing = g.mul(ew, eh)?;
    let gap = g.sub(enclosing, union)?;
    let penalty = g.div(gap, enclosing)?;
    let giou = g.sub(iou, penalty)?;
    let one_minus = g.rsub(1.0, giou);
    let giou_term = g.sum(one_minus);
    Ok((l1, giou_term))
}

/// Hungarian assignment of `targets` to the predictions in `preds`.
pub fn match_predictions(preds: &[Prediction], targets: &[Label], w: &LossWeights) -> MatchResult {
    hungarian_match(&match_cost(preds, targets, w))
}

/// Set-matching detection loss for one image, normalized by the number of
/// targets (at least 1):
/// `[w_cls · Σ focal + w_l1 · Σ_matched L1 + w_giou · Σ_matched (1 - giou)] / max(T, 1)`.
/// Unmatched predictions contribute only their background focal term.
pub fn set_detection_loss(
    g: &mut Graph,
    preds: PredVars,
    targets: &[Label],
    w: &LossWeights,
) -> Result<Var> {
    let values = preds.predictions(g);
    let m = match_predictions(&values, targets, w);
    let (n, c) = (g.shape(preds.logits)[0], g.shape(preds.logits)[1]);
    let mut onehot = Tensor::zeros(&[n, c]);
    for &(p, t) in &m.pairs {
        onehot.data_mut()[p * c + targets[t].class_id] = 1.0;
    }
    let cls = graph_focal_sum(g, preds.logits, &onehot, w)?;
    let mut total = g.scale(cls, w.cls);
    if !m.pairs.is_empty() {
        let rows: Vec<usize> = m.pairs.iter().map(|&(p, _)| p).collect();
        let tboxes: Vec<BBox> = m.pairs.iter().map(|&(_, t)| targets[t].bbox).collect();
        let matched = g.gather_rows(preds.boxes, &rows)?;
        let (l1, gi) = graph_box_terms(g, matched, &tboxes)?;
        let l1 = g.scale(l1, w.l1);
        let gi = g.scale(gi, w.giou);
        total = g.add(total, l1)?;
        total = g.add(total, gi)?;
    }
    let norm = targets.len().max(1) as f64;
    Ok(g.scale(total, 1.0 / norm))
}
