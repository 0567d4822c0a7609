//! Second stage: a foundation-free student learns from its own EMA teacher
//! and from the frozen adapted dual-encoder model, fused at the loss level.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{
    augment, ema_update, hard_loss, pseudo_labels_from, student_pass, to_labels, AugmentConfig, AugmentMode, StudentPass,
};
use crate::detection::{
    graph_bce_sum, graph_box_terms, match_predictions, nms, BBox, Detection, Label, LossWeights, PredVars, Prediction,
    NMS_IOU,
};
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::model::{Detector, DetectorConfig, MaskSpec};
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Dsod,
    Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta_ema: f64,
    pub delta_static: f64,
    /// Static-teacher predictions at or above this score act as soft targets.
    pub soft_floor: f64,
    pub init: InitMode,
    /// Train on NMS-merged pseudo-labels of both teachers instead.
    pub box_fusion: bool,
    pub ema_alpha: f64,
    pub mask_ratio: f64,
    pub mask_patch: usize,
    pub augment: AugmentConfig,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda2: 0.5,
            lambda3: 0.5,
            alpha: 5.0,
            beta: 2.0,
            delta_ema: 0.3,
            delta_static: 0.3,
            soft_floor: 0.1,
            init: InitMode::Dsod,
            box_fusion: false,
            ema_alpha: 0.999,
            mask_ratio: 0.3,
            mask_patch: 8,
            augment: AugmentConfig::default(),
            epochs: 4,
            batch: 2,
            lr: 1e-4,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(Error::Config("lambda2 and lambda3 must be non-negative".into()));
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::Config("alpha and beta must be positive".into()));
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

/// Hungarian-matched soft distillation:
/// `Σ_pairs α · BCE(c_T, c_S) + β · [w_l1 · L1 + w_giou · (1 − GIoU)]`.
pub fn soft_static_loss(
    g: &mut Graph,
    student: PredVars,
    teacher: &[Prediction],
    alpha: f64,
    beta: f64,
    w: &LossWeights,
) -> Result<Var> {
    if teacher.is_empty() {
        return g.scalar(0.0);
    }
    let targets: Vec<Label> = teacher
        .iter()
        .map(|p| Label {
            class_id: p.top_class().0,
            bbox: p.bbox,
        })
        .collect();
    let m = match_predictions(&student.predictions(g), &targets, w);
    let rows: Vec<usize> = m.pairs.iter().map(|&(p, _)| p).collect();
    let c = g.shape(student.logits)[1];
    let probs: Vec<f64> = m.pairs.iter().flat_map(|&(_, t)| teacher[t].class_probs.clone()).collect();
    let tboxes: Vec<BBox> = m.pairs.iter().map(|&(_, t)| teacher[t].bbox).collect();
    let logits = g.gather_rows(student.logits, &rows)?;
    let bce = graph_bce_sum(g, logits, &Tensor::new(vec![rows.len(), c], probs)?)?;
    let boxes = g.gather_rows(student.boxes, &rows)?;
    let (l1, gi) = graph_box_terms(g, boxes, &tboxes)?;
    let l1 = g.scale(l1, w.l1 * beta);
    let gi = g.scale(gi, w.giou * beta);
    let bce = g.scale(bce, alpha);
    let total = g.add(bce, l1)?;
    g.add(total, gi)
}

/// Loss components of one image, all as tape handles.
pub struct DistillTerms {
    pub hard_ema: Var,
    pub hard_static: Option<Var>,
    pub soft_static: Option<Var>,
    pub total: Var,
}

fn branch_sum(g: &mut Graph, (det, det_m): (Var, Option<Var>)) -> Result<Var> {
    match det_m {
        Some(m) => g.add(det, m),
        None => Ok(det),
    }
}

/// `L_hard(EMA) + λ2 · L_hard(static) + λ3 · L_soft(static)`, where each hard
/// term covers both student branches.
pub fn distill_loss(
    g: &mut Graph,
    pass: &StudentPass,
    ema_labels: &[Label],
    static_labels: &[Label],
    static_soft: &[Prediction],
    cfg: &DistillConfig,
    w: &LossWeights,
) -> Result<DistillTerms> {
    let hard_ema = hard_loss(g, pass, ema_labels, w)?;
    let hard_ema = branch_sum(g, hard_ema)?;
    let mut total = hard_ema;
    let hard_static = if cfg.lambda2 > 0.0 {
        let h = hard_loss(g, pass, static_labels, w)?;
        let h = branch_sum(g, h)?;
        let s = g.scale(h, cfg.lambda2);
        total = g.add(total, s)?;
        Some(h)
    } else {
        None
    };
    let soft_static = if cfg.lambda3 > 0.0 {
        let s = soft_static_loss(g, pass.normal.preds, static_soft, cfg.alpha, cfg.beta, w)?;
        let t = g.scale(s, cfg.lambda3);
        total = g.add(total, t)?;
        Some(s)
    } else {
        None
    };
    Ok(DistillTerms {
        hard_ema,
        hard_static,
        soft_static,
        total,
    })
}

/// Scalar form of [`distill_loss`].
pub fn combine_distill_loss(hard_ema: f64, hard_static: f64, soft_static: f64, lambda2: f64, lambda3: f64) -> f64 {
    hard_ema + lambda2 * hard_static + lambda3 * soft_static
}

/// Union of both teachers' labels, deduplicated by class-wise NMS and
/// thresholded at `delta`. The result does not depend on input order.
pub fn box_fusion_baseline(ema: &[Detection], static_: &[Detection], delta: f64) -> Vec<Detection> {
    let mut all: Vec<Detection> = ema.iter().chain(static_).copied().collect();
    all.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.class_id.cmp(&b.class_id))
            .then_with(|| {
                a.bbox
                    .as_array()
                    .iter()
                    .zip(b.bbox.as_array())
                    .map(|(x, y)| x.total_cmp(&y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    nms(&all, NMS_IOU).into_iter().filter(|d| d.score >= delta).collect()
}

/// Copies the student tower and head out of a full checkpoint.
pub fn init_student_from_dsod(config: &DetectorConfig, params: &ParamStore) -> Result<Detector> {
    let mut det = Detector::foundation_free(config.clone(), 0)?;
    let missing: Vec<String> = det
        .params
        .names()
        .filter(|n| !params.contains(n))
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingKeys(missing));
    }
    for (name, t) in det.params.iter_mut() {
        let src = params.get(name)?;
        if src.shape() != t.shape() {
            return Err(Error::KeyMismatch(format!("shape of {name}")));
        }
        *t = src.clone();
        t.zero_grad();
    }
    Ok(det)
}

/// A frozen adapted model and the weights it runs with.
pub struct StaticTeacher<'a> {
    pub model: &'a Detector,
    pub weights: [f64; 3],
}

impl StaticTeacher<'_> {
    pub fn predict(&self, image: &Tensor) -> Result<Vec<Prediction>> {
        self.model.predict(image, &self.weights, true)
    }
}

/// Predictions whose best class probability reaches `floor`.
pub fn soft_targets(preds: &[Prediction], floor: f64) -> Vec<Prediction> {
    preds.iter().filter(|p| p.top_class().1 >= floor).cloned().collect()
}

pub struct Distiller<'a> {
    pub student: Detector,
    pub teacher: Detector,
    pub static_teacher: StaticTeacher<'a>,
    pub config: DistillConfig,
    pub iteration: usize,
    adam: Adam,
    rng: ChaCha8Rng,
    loss_weights: LossWeights,
}

impl<'a> Distiller<'a> {
    /// `init` provides the student and EMA teacher weights; it may carry a
    /// foundation branch, which is dropped.
    pub fn new(init: &Detector, static_teacher: StaticTeacher<'a>, config: DistillConfig) -> Result<Self> {
        config.validate()?;
        if !static_teacher.model.has_foundation() {
            return Err(Error::Config("the static teacher needs its foundation branch".into()));
        }
        let student = init_student_from_dsod(&init.config, &init.params)?;
        Ok(Self {
            teacher: student.clone(),
            student,
            static_teacher,
            iteration: 0,
            adam: Adam::new(AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            }),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            loss_weights: LossWeights::default(),
            config,
        })
    }

    pub fn epoch_order(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
    }

    pub fn step(&mut self, batch: &[&Tensor]) -> Result<MetricsRow> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let cfg = self.config;
        let strong_cfg = AugmentConfig {
            flip_prob: 0.0,
            ..cfg.augment
        };
        let scale = 1.0 / batch.len() as f64;
        let mut row = MetricsRow {
            iteration: self.iteration,
            ..MetricsRow::default()
        };
        for &image in batch {
            let (weak, _) = augment(image, &[], AugmentMode::Weak, &cfg.augment, &mut self.rng)?;
            let ema_pl = pseudo_labels_from(&self.teacher.predict(&weak, &[0.0; 3], false)?, cfg.delta_ema);
            let static_preds = self.static_teacher.predict(&weak)?;
            let static_pl = pseudo_labels_from(&static_preds, cfg.delta_static);
            let (strong, _) = augment(&weak, &[], AugmentMode::Strong, &strong_cfg, &mut self.rng)?;
            let mask = cfg.mask(self.rng.random());

            let mut g = Graph::new();
            let pass = student_pass(&mut g, &self.student, &strong, &[0.0; 3], false, mask)?;
            let loss = if cfg.box_fusion {
                let fused = to_labels(&box_fusion_baseline(&ema_pl, &static_pl, cfg.delta_ema.min(cfg.delta_static)));
                let h = hard_loss(&mut g, &pass, &fused, &self.loss_weights)?;
                let h = branch_sum(&mut g, h)?;
                row.hard_ema += g.item(h) * scale;
                h
            } else {
                let soft = soft_targets(&static_preds, cfg.soft_floor);
                let t = distill_loss(
                    &mut g,
                    &pass,
                    &to_labels(&ema_pl),
                    &to_labels(&static_pl),
                    &soft,
                    &cfg,
                    &self.loss_weights,
                )?;
                row.hard_ema += g.item(t.hard_ema) * scale;
                row.hard_static += t.hard_static.map_or(0.0, |v| g.item(v)) * scale;
                row.soft_static += t.soft_static.map_or(0.0, |v| g.item(v)) * scale;
                t.total
            };
            let loss = g.scale(loss, scale);
            row.loss += g.item(loss);
            row.pseudo_labels += ema_pl.len() as f64;
            self.student.params.accumulate(&g.backward(loss)?);
        }
        self.student.params.fill_missing_grads();
        self.adam.step(&mut self.student.params)?;
        ema_update(&mut self.teacher.params, &self.student.params, cfg.ema_alpha)?;
        self.iteration += 1;
        Ok(row)
    }
}

/// Reinforcement of a false positive: the negative loss gradient on the
/// `fp` class logit of the student prediction matched to `fp` in the hard
/// loss. Positive values mean a descent step raises the false detection's
/// score; negative values mean the step suppresses it. Loss-level fusion
/// trains on both teachers' terms, box fusion on their merged labels; no
/// masking is applied.
pub fn fp_reinforcement(
    student: &Detector,
    image: &Tensor,
    ema_pl: &[Detection],
    static_pl: &[Detection],
    static_soft: &[Prediction],
    fp: &Detection,
    cfg: &DistillConfig,
) -> Result<f64> {
    let w = LossWeights::default();
    let mut g = Graph::new();
    let pass = student_pass(&mut g, student, image, &[0.0; 3], false, None)?;
    let (loss, labels) = if cfg.box_fusion {
        let fused = to_labels(&box_fusion_baseline(ema_pl, static_pl, cfg.delta_ema.min(cfg.delta_static)));
        let (det, _) = hard_loss(&mut g, &pass, &fused, &w)?;
        (det, fused)
    } else {
        let ema = to_labels(ema_pl);
        let t = distill_loss(&mut g, &pass, &ema, &to_labels(static_pl), static_soft, cfg, &w)?;
        (t.total, ema)
    };
    let target = labels
        .iter()
        .position(|l| l.class_id == fp.class_id && l.bbox == fp.bbox)
        .ok_or_else(|| Error::InvalidArgument("false positive is not among the training labels".into()))?;
    let m = match_predictions(&pass.normal.preds.predictions(&g), &labels, &w);
    let row = m
        .pairs
        .iter()
        .find(|&&(_, t)| t == target)
        .map(|&(p, _)| p)
        .ok_or_else(|| Error::InvalidArgument("false positive was not matched".into()))?;
    let grads = g.backward(loss)?;
    let c = student.config.num_classes;
    let gl = grads.wrt(pass.normal.preds.logits).unwrap_or(&[]);
    Ok(-gl.get(row * c + fp.class_id).copied().unwrap_or(0.0))
}
