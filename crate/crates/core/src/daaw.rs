//! Fusion-weight selection from prediction stability, and the square-root
//! warm-up that ramps the selected weight in.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::{iou, BBox, Detection, Prediction};
use crate::error::{Error, Result};
use crate::model::Detector;
use crate::tensor::Tensor;

/// A confident prediction of the unfused model and its counterpart, if
/// any, in the fused model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstancePair {
    pub init: Detection,
    /// Fused box and the fused probability of the init detection's class.
    pub fused: Option<(BBox, f64)>,
}

/// Top-`k` init detections by score, each paired to the fused prediction of
/// highest IoU. A pair stays unmatched when no fused box overlaps.
pub fn pair_instances(init: &[Prediction], fused: &[Prediction], k: usize) -> Vec<InstancePair> {
    let mut dets: Vec<Detection> = init.iter().map(Prediction::to_detection).collect();
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets.truncate(k);
    dets.into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, f) in fused.iter().enumerate() {
                let v = iou(&d.bbox, &f.bbox);
                if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            InstancePair {
                init: d,
                fused: best.map(|(j, _)| {
                    let f = &fused[j];
                    (f.bbox, f.class_probs.get(d.class_id).copied().unwrap_or(0.0))
                }),
            }
        })
        .collect()
}

fn require_pairs(pairs: &[InstancePair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("stability of an empty pair list".into()));
    }
    Ok(())
}

/// `1 - mean(min(|c_init - c_fuse| / c_init, 1))`; unmatched pairs count 1.
pub fn stability_cls(pairs: &[InstancePair]) -> Result<f64> {
    require_pairs(pairs)?;
    let dev: f64 = pairs
        .iter()
        .map(|p| match p.fused {
            Some((_, c)) if p.init.score > 0.0 => ((p.init.score - c).abs() / p.init.score).min(1.0),
            _ => 1.0,
        })
        .sum();
    Ok(1.0 - dev / pairs.len() as f64)
}

/// Mean IoU between paired boxes; unmatched pairs count 0.
pub fn stability_loc(pairs: &[InstancePair]) -> Result<f64> {
    require_pairs(pairs)?;
    let s: f64 = pairs
        .iter()
        .map(|p| p.fused.map_or(0.0, |(b, _)| iou(&p.init.bbox, &b)))
        .sum();
    Ok(s / pairs.len() as f64)
}

/// Geometric mean of the two stabilities.
pub fn stability_joint(s_cls: f64, s_loc: f64) -> f64 {
    (s_cls * s_loc).sqrt()
}

/// The stability curve over candidate weights and its elbow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub weights: Vec<f64>,
    pub s_cls: Vec<f64>,
    pub s_loc: Vec<f64>,
    pub s_joint: Vec<f64>,
    pub selected: usize,
    pub w_star: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct StabilityCsvRow {
    w: f64,
    s_cls: f64,
    s_loc: f64,
    s_joint: f64,
    selected: bool,
}

impl StabilityReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for i in 0..self.weights.len() {
            w.serialize(StabilityCsvRow {
                w: self.weights[i],
                s_cls: self.s_cls[i],
                s_loc: self.s_loc[i],
                s_joint: self.s_joint[i],
                selected: i == self.selected,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_candidates(weights: &[f64]) -> Result<()> {
    if weights.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 candidate weights, got {}", weights.len())));
    }
    if weights.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidArgument("candidate weights must be strictly ascending".into()));
    }
    Ok(())
}

/// Interior index of maximum `|S[t+1] - 2 S[t] + S[t-1]|`, lowest on ties.
pub fn elbow_index(s: &[f64]) -> Result<usize> {
    if s.len() < 3 {
        return Err(Error::InvalidArgument("elbow needs at least 3 points".into()));
    }
    let mut best = (1, f64::NEG_INFINITY);
    for t in 1..s.len() - 1 {
        let d2 = (s[t + 1] - 2.0 * s[t] + s[t - 1]).abs();
        if d2 > best.1 {
            best = (t, d2);
        }
    }
    Ok(best.0)
}

/// Builds a report from a precomputed stability curve.
pub fn select_from_curve(weights: &[f64], s_cls: Vec<f64>, s_loc: Vec<f64>, s_joint: Vec<f64>) -> Result<StabilityReport> {
    check_candidates(weights)?;
    if s_joint.len() != weights.len() || s_cls.len() != weights.len() || s_loc.len() != weights.len() {
        return Err(Error::InvalidArgument("one stability value per candidate weight".into()));
    }
    let selected = elbow_index(&s_joint)?;
    Ok(StabilityReport {
        weights: weights.to_vec(),
        s_cls,
        s_loc,
        s_joint,
        selected,
        w_star: weights[selected],
    })
}

/// Order-independent mean: values are sorted before summation.
fn stable_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sweeps `candidates` with a predictor `predict(image, w)`; `w = 0` must be
/// the unfused model. `candidates[0]` must be 0.
pub fn stability_sweep<F>(images: &[Tensor], candidates: &[f64], k: usize, predict: F) -> Result<StabilityReport>
where
    F: Fn(&Tensor, f64) -> Result<Vec<Prediction>>,
{
    check_candidates(candidates)?;
    if candidates[0] != 0.0 {
        return Err(Error::InvalidArgument("first candidate weight must be 0".into()));
    }
    if images.is_empty() {
        return Err(Error::InvalidArgument("weight selection needs at least one image".into()));
    }
    let init: Vec<Vec<Prediction>> = images.iter().map(|img| predict(img, 0.0)).collect::<Result<_>>()?;
    let (mut s_cls, mut s_loc, mut s_joint) = (vec![], vec![], vec![]);
    for &w in candidates {
        let (mut c, mut l, mut j) = (vec![], vec![], vec![]);
        for (img, base) in images.iter().zip(&init) {
            let fused = if w == 0.0 { base.clone() } else { predict(img, w)? };
            let pairs = pair_instances(base, &fused, k);
            if pairs.is_empty() {
                continue;
            }
            let (sc, sl) = (stability_cls(&pairs)?, stability_loc(&pairs)?);
            c.push(sc);
            l.push(sl);
            j.push(stability_joint(sc, sl));
        }
        if j.is_empty() {
            return Err(Error::InvalidArgument("no image produced any prediction".into()));
        }
        s_cls.push(stable_mean(c));
        s_loc.push(stable_mean(l));
        s_joint.push(stable_mean(j));
    }
    select_from_curve(candidates, s_cls, s_loc, s_joint)
}

/// Weight selection for a detector that carries a foundation branch: the
/// fused model is the same detector with weight `w` on every level.
pub fn select_weight(det: &Detector, images: &[Tensor], candidates: &[f64], k: usize) -> Result<StabilityReport> {
    stability_sweep(images, candidates, k, |img, w| {
        if w == 0.0 {
            det.predict(img, &[0.0; 3], false)
        } else {
            det.predict(img, &[w; 3], true)
        }
    })
}

/// `{0, 0.05, …, 0.5}`.
pub fn default_candidates() -> Vec<f64> {
    (0..=10).map(|i| i as f64 * 0.05).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub w_star: [f64; 3],
    pub n_warm: usize,
}

/// `min(sqrt(i / N_warm), 1) · w*` per level.
pub fn warmup_weight(i: usize, s: &WeightSchedule) -> [f64; 3] {
    let f = (i as f64 / s.n_warm.max(1) as f64).sqrt().min(1.0);
    s.w_star.map(|w| f * w)
}
