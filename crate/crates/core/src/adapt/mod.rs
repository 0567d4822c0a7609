//! Mean-teacher self-training with feature injection, the masked
//! consistency branch and heatmap-weighted feature regularization.

mod augment;
mod safr;

pub use augment::{augment, AugmentConfig, AugmentMode};
pub use safr::{heatmap_from_boxes, safr_loss};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::daaw::{warmup_weight, WeightSchedule};
use crate::detection::{nms, set_detection_loss, Detection, Label, LossWeights, Prediction, NMS_IOU};
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::model::{forward, inverse_project, Detector, ForwardOptions, MaskSpec, ModelOutput};
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub delta: f64,
    pub ema_alpha: f64,
    pub lambda1: f64,
    /// Probability of masking each patch in the consistency branch; 0 turns
    /// the branch off.
    pub mask_ratio: f64,
    pub mask_patch: usize,
    /// Warm-up length in iterations; `None` means one epoch.
    pub n_warm: Option<usize>,
    pub use_ufi: bool,
    pub use_safr: bool,
    /// Square-root warm-up of the fusion weight; off means the weight is
    /// applied in full from the first step.
    pub use_daaw: bool,
    pub augment: AugmentConfig,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Learning-rate multiplier of the foundation-to-pyramid projection.
    pub sse_lr_scale: f64,
    /// Learning-rate multiplier of the inverse projection used by the
    /// regulariser; it only serves the auxiliary reconstruction target.
    pub inverse_lr_scale: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            delta: 0.3,
            ema_alpha: 0.999,
            lambda1: 0.1,
            mask_ratio: 0.3,
            mask_patch: 8,
            n_warm: None,
            use_ufi: true,
            use_safr: true,
            use_daaw: true,
            augment: AugmentConfig::default(),
            epochs: 6,
            batch: 2,
            lr: 1e-4,
            sse_lr_scale: 1.0,
            inverse_lr_scale: 10.0,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta {} outside (0, 1)", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(Error::Config(format!("ema_alpha {} outside [0, 1]", self.ema_alpha)));
        }
        if self.lambda1 < 0.0 {
            return Err(Error::Config("lambda1 must be non-negative".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        Ok(())
    }

    fn mask(&self, seed: u64) -> Option<MaskSpec> {
        (self.mask_ratio > 0.0).then_some(MaskSpec {
            ratio: self.mask_ratio,
            patch: self.mask_patch,
            seed,
        })
    }
}

/// `θ_t ← α θ_t + (1 − α) θ_s` for every scalar, kept inside the segment
/// between the two values. Frozen entries are copied.
pub fn ema_update(teacher: &mut ParamStore, student: &ParamStore, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("ema alpha {alpha} outside [0, 1]")));
    }
    if teacher.len() != student.len() {
        return Err(Error::KeyMismatch(format!("{} vs {} entries", teacher.len(), student.len())));
    }
    for (name, s) in student.iter() {
        let t = teacher
            .get(name)
            .map_err(|_| Error::KeyMismatch(format!("teacher lacks {name}")))?;
        if t.shape() != s.shape() {
            return Err(Error::KeyMismatch(format!("shape of {name}: {:?} vs {:?}", t.shape(), s.shape())));
        }
    }
    for (name, t) in teacher.iter_mut() {
        let s = student.get(name)?.data();
        let copy = alpha == 0.0 || student.is_frozen(name);
        for (tv, &sv) in t.data_mut().iter_mut().zip(s) {
            *tv = if copy {
                sv
            } else {
                (alpha * *tv + (1.0 - alpha) * sv).clamp(tv.min(sv), tv.max(sv))
            };
        }
    }
    Ok(())
}

/// Top-N teacher predictions at or above `delta`, before deduplication.
pub fn pseudo_label_candidates(
    teacher: &Detector,
    image: &Tensor,
    weights: &[f64; 3],
    use_foundation: bool,
    delta: f64,
) -> Result<Vec<Detection>> {
    Ok(threshold(&teacher.predict(image, weights, use_foundation)?, delta))
}

fn threshold(preds: &[Prediction], delta: f64) -> Vec<Detection> {
    preds
        .iter()
        .map(Prediction::to_detection)
        .filter(|d| d.score >= delta)
        .collect()
}

/// Pseudo-labels from already computed teacher predictions.
pub fn pseudo_labels_from(preds: &[Prediction], delta: f64) -> Vec<Detection> {
    nms(&threshold(preds, delta), NMS_IOU)
}

/// Thresholded, NMS-deduplicated teacher detections.
pub fn generate_pseudo_labels(
    teacher: &Detector,
    image: &Tensor,
    weights: &[f64; 3],
    use_foundation: bool,
    delta: f64,
) -> Result<Vec<Detection>> {
    Ok(pseudo_labels_from(&teacher.predict(image, weights, use_foundation)?, delta))
}

pub fn to_labels(dets: &[Detection]) -> Vec<Label> {
    dets.iter()
        .map(|d| Label {
            class_id: d.class_id,
            bbox: d.bbox,
        })
        .collect()
}

/// `det + det_masked + λ1 · reg`.
pub fn adapt_loss(g: &mut Graph, det: Var, det_masked: Option<Var>, reg: Option<Var>, lambda1: f64) -> Result<Var> {
    let mut total = det;
    if let Some(m) = det_masked {
        total = g.add(total, m)?;
    }
    if let Some(r) = reg {
        let r = g.scale(r, lambda1);
        total = g.add(total, r)?;
    }
    Ok(total)
}

/// Scalar form of [`adapt_loss`].
pub fn combine_adapt_loss(det: f64, det_masked: f64, reg: f64, lambda1: f64) -> f64 {
    det + det_masked + lambda1 * reg
}

/// Student forward passes for one strongly augmented image: the normal
/// branch and, when masking is on, the masked branch. The foundation
/// encoder always sees the unmasked image.
pub struct StudentPass {
    pub normal: ModelOutput,
    pub masked: Option<ModelOutput>,
}

pub fn student_pass(
    g: &mut Graph,
    student: &Detector,
    image: &Tensor,
    weights: &[f64; 3],
    use_foundation: bool,
    mask: Option<MaskSpec>,
) -> Result<StudentPass> {
    let opts = ForwardOptions {
        use_foundation,
        mask: None,
    };
    let normal = forward(g, &student.config, &student.params, image, weights, opts)?;
    let masked = match mask {
        Some(m) => Some(forward(
            g,
            &student.config,
            &student.params,
            image,
            weights,
            ForwardOptions { mask: Some(m), ..opts },
        )?),
        None => None,
    };
    Ok(StudentPass { normal, masked })
}

/// Detection loss of both branches against one label set.
pub fn hard_loss(g: &mut Graph, pass: &StudentPass, labels: &[Label], w: &LossWeights) -> Result<(Var, Option<Var>)> {
    let det = set_detection_loss(g, pass.normal.preds, labels, w)?;
    let det_m = match &pass.masked {
        Some(m) => Some(set_detection_loss(g, m.preds, labels, w)?),
        None => None,
    };
    Ok((det, det_m))
}

/// Drops the parameter groups a configuration never touches, so every
/// remaining trainable entry receives a gradient path.
pub fn prune_for(det: &mut Detector, use_ufi: bool, use_safr: bool) {
    let drop: Vec<String> = det
        .params
        .names()
        .filter(|n| {
            (!use_ufi && n.starts_with("sse."))
                || (!use_safr && n.starts_with("inv."))
                || (!use_ufi && !use_safr && n.starts_with("foundation."))
        })
        .map(str::to_string)
        .collect();
    for n in drop {
        det.params.remove(&n);
    }
}

/// Student, EMA teacher and optimizer state of one self-training run.
pub struct Adapter {
    pub student: Detector,
    pub teacher: Detector,
    pub config: AdaptConfig,
    pub schedule: WeightSchedule,
    pub iteration: usize,
    adam: Adam,
    rng: ChaCha8Rng,
    loss_weights: LossWeights,
}

impl Adapter {
    /// Both models start from `source`. `steps_per_epoch` sets the default
    /// warm-up length.
    pub fn new(source: &Detector, config: AdaptConfig, w_star: [f64; 3], steps_per_epoch: usize) -> Result<Self> {
        config.validate()?;
        if (config.use_ufi || config.use_safr) && !source.has_foundation() {
            return Err(Error::Config("feature injection and regularization need a foundation branch".into()));
        }
        let mut student = source.clone();
        prune_for(&mut student, config.use_ufi, config.use_safr);
        let teacher = student.clone();
        let n_warm = config.n_warm.unwrap_or(steps_per_epoch).max(1);
        Ok(Self {
            student,
            teacher,
            schedule: WeightSchedule {
                w_star: if config.use_ufi { w_star } else { [0.0; 3] },
                n_warm,
            },
            iteration: 0,
            adam: Adam::new(AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            })
            .with_lr_scale("sse.", config.sse_lr_scale)
            .with_lr_scale("inv.", config.inverse_lr_scale),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            loss_weights: LossWeights::default(),
            config,
        })
    }

    /// Fusion weights in effect at the current iteration.
    pub fn current_weights(&self) -> [f64; 3] {
        if !self.config.use_daaw {
            return self.schedule.w_star;
        }
        warmup_weight(self.iteration, &self.schedule)
    }

    /// Fusion weights of the converged model.
    pub fn final_weights(&self) -> [f64; 3] {
        self.schedule.w_star
    }

    /// A fresh shuffled visiting order over `n` images.
    pub fn epoch_order(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
    }

    /// One optimizer step on `batch`, followed by the EMA update.
    pub fn step(&mut self, batch: &[&Tensor]) -> Result<MetricsRow> {
        self.step_inner(batch, None)
    }

    /// Like [`Adapter::step`] but trains on the given labels instead of
    /// teacher pseudo-labels; an upper-bound reference.
    pub fn step_with_labels(&mut self, batch: &[&Tensor], labels: &[&[Label]]) -> Result<MetricsRow> {
        if labels.len() != batch.len() {
            return Err(Error::InvalidArgument("one label list per image".into()));
        }
        self.step_inner(batch, Some(labels))
    }

    fn step_inner(&mut self, batch: &[&Tensor], given: Option<&[&[Label]]>) -> Result<MetricsRow> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let cfg = self.config;
        let w = self.current_weights();
        let strong_cfg = AugmentConfig {
            flip_prob: 0.0,
            ..cfg.augment
        };
        let use_foundation = cfg.use_ufi || cfg.use_safr;
        let student_w = if cfg.use_ufi { w } else { [0.0; 3] };
        let scale = 1.0 / batch.len() as f64;
        let mut row = MetricsRow {
            iteration: self.iteration,
            w3: w[0],
            w4: w[1],
            w5: w[2],
            ..MetricsRow::default()
        };
        for (k, &image) in batch.iter().enumerate() {
            let given_k = given.map_or(&[][..], |g| g[k]);
            let (weak, weak_labels) = augment(image, given_k, AugmentMode::Weak, &cfg.augment, &mut self.rng)?;
            let pl = match given {
                Some(_) => weak_labels
                    .iter()
                    .map(|l| Detection {
                        bbox: l.bbox,
                        class_id: l.class_id,
                        score: 1.0,
                    })
                    .collect(),
                None => generate_pseudo_labels(&self.teacher, &weak, &w, cfg.use_ufi, cfg.delta)?,
            };
            let (strong, _) = augment(&weak, &[], AugmentMode::Strong, &strong_cfg, &mut self.rng)?;
            let mask = cfg.mask(self.rng.random());
            let labels = to_labels(&pl);

            let mut g = Graph::new();
            let pass = student_pass(&mut g, &self.student, &strong, &student_w, use_foundation, mask)?;
            let (det, det_m) = hard_loss(&mut g, &pass, &labels, &self.loss_weights)?;
            let reg = match pass.normal.foundation {
                Some(f) if cfg.use_safr && !pl.is_empty() => {
                    let c = &self.student.config;
                    let inv = inverse_project(&mut g, c, &self.student.params, &pass.normal.cnn)?;
                    let (rows, cols) = c.foundation_grid();
                    let boxes: Vec<_> = pl.iter().map(|d| d.bbox).collect();
                    let hm = heatmap_from_boxes(&boxes, rows, cols)?;
                    Some(safr_loss(&mut g, &inv, f, &hm)?)
                }
                _ => None,
            };
            let loss = adapt_loss(&mut g, det, det_m, reg, cfg.lambda1)?;
            let loss = g.scale(loss, scale);
            row.loss += g.item(loss);
            row.det += g.item(det) * scale;
            row.det_masked += det_m.map_or(0.0, |v| g.item(v)) * scale;
            row.reg += reg.map_or(0.0, |v| g.item(v)) * scale;
            row.pseudo_labels += pl.len() as f64;
            self.student.params.accumulate(&g.backward(loss)?);
        }
        row.hard_ema = row.det + row.det_masked;
        self.student.params.fill_missing_grads();
        self.adam.step(&mut self.student.params)?;
        ema_update(&mut self.teacher.params, &self.student.params, cfg.ema_alpha)?;
        self.iteration += 1;
        Ok(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DetectorConfig;

    fn store(vals: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::new(vec![vals.len()], vals.to_vec()).unwrap());
        p
    }

    #[test]
    fn ema_closed_forms() {
        let s = store(&[0.0, 3.0, -1.5]);
        let mut t = store(&[1.0, -2.0, 0.25]);
        let before = t.clone();
        ema_update(&mut t, &s, 1.0).unwrap();
        assert_eq!(t, before);
        ema_update(&mut t, &s, 0.0).unwrap();
        assert_eq!(t, s);

        let mut t = store(&[1.0]);
        ema_update(&mut t, &store(&[0.0]), 0.9).unwrap();
        assert!((t.get("a").unwrap().data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn ema_rejects_mismatch() {
        let mut t = store(&[1.0, 2.0]);
        assert!(matches!(ema_update(&mut t, &store(&[1.0]), 0.5), Err(Error::KeyMismatch(_))));
        let mut other = ParamStore::new();
        other.insert("b", Tensor::zeros(&[2]));
        assert!(matches!(ema_update(&mut t, &other, 0.5), Err(Error::KeyMismatch(_))));
    }

    #[test]
    fn composite_loss() {
        assert!((combine_adapt_loss(1.0, 0.8, 0.5, 0.1) - 1.85).abs() < 1e-12);
        assert_eq!(combine_adapt_loss(1.0, 0.8, 0.5, 0.0), 1.8);
        let mut g = Graph::new();
        let a = g.scalar(1.0).unwrap();
        let b = g.scalar(0.8).unwrap();
        let c = g.scalar(0.5).unwrap();
        let l = adapt_loss(&mut g, a, Some(b), Some(c), 0.1).unwrap();
        assert!((g.item(l) - 1.85).abs() < 1e-12);
    }

    fn image(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = DetectorConfig::tiny();
        Tensor::new(
            vec![3, cfg.height, cfg.width],
            (0..3 * cfg.height * cfg.width).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn pseudo_label_thresholds() {
        let det = Detector::new(DetectorConfig::tiny(), 3).unwrap();
        let img = image(1);
        assert!(generate_pseudo_labels(&det, &img, &[0.1; 3], true, 1.0).unwrap().is_empty());
        let all = pseudo_label_candidates(&det, &img, &[0.1; 3], true, 0.0).unwrap();
        assert_eq!(all.len(), det.config.top_n);
    }

    fn tiny_config(use_ufi: bool, use_safr: bool) -> AdaptConfig {
        AdaptConfig {
            delta: 0.01,
            ema_alpha: 0.9,
            mask_patch: 4,
            use_ufi,
            use_safr,
            lr: 1e-3,
            ..AdaptConfig::default()
        }
    }

    fn run(cfg: AdaptConfig, steps: usize) -> (Vec<MetricsRow>, Adapter) {
        let source = Detector::new(DetectorConfig::tiny(), 7).unwrap();
        let mut a = Adapter::new(&source, cfg, [0.2; 3], 4).unwrap();
        let imgs: Vec<Tensor> = (0..4).map(image).collect();
        let mut rows = vec![];
        for i in 0..steps {
            let b = [&imgs[i % 4], &imgs[(i + 1) % 4]];
            rows.push(a.step(&b).unwrap());
        }
        (rows, a)
    }

    #[test]
    fn steps_are_deterministic() {
        let (a, _) = run(tiny_config(true, true), 3);
        let (b, _) = run(tiny_config(true, true), 3);
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.loss.is_finite()));
        assert_eq!(a[0].w3, 0.0);
        assert!(a[2].w3 > a[1].w3);
    }

    #[test]
    fn frozen_foundation_untouched() {
        let source = Detector::new(DetectorConfig::tiny(), 7).unwrap();
        let (_, a) = run(tiny_config(true, true), 3);
        for name in ["foundation.fc1.w", "foundation.fc2.b"] {
            assert_eq!(a.student.params.get(name).unwrap(), source.params.get(name).unwrap());
            assert_eq!(a.teacher.params.get(name).unwrap(), source.params.get(name).unwrap());
        }
    }

    #[test]
    fn baseline_has_no_foundation() {
        let (rows, a) = run(tiny_config(false, false), 2);
        assert!(!a.student.has_foundation());
        assert!(rows.iter().all(|r| r.reg == 0.0 && r.w3 == 0.0));
    }

    #[test]
    fn no_pseudo_labels_still_moves() {
        let source = Detector::new(DetectorConfig::tiny(), 7).unwrap();
        let cfg = AdaptConfig {
            delta: 0.999_999,
            ..tiny_config(true, true)
        };
        let (rows, a) = run(cfg, 2);
        assert!(rows.iter().all(|r| r.pseudo_labels == 0.0 && r.reg == 0.0));
        let name = "head.l3.w";
        assert_ne!(a.student.params.get(name).unwrap(), source.params.get(name).unwrap());
        assert_ne!(a.teacher.params.get(name).unwrap(), source.params.get(name).unwrap());
    }
}
