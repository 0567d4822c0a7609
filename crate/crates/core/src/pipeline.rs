//! End-to-end stages shared by the CLI, the examples and the acceptance
//! suite: source pretraining, the weight sweep, self-training,
//! distillation, evaluation and the feature-orthogonality analysis.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptConfig, Adapter};
use crate::daaw::{default_candidates, select_weight, StabilityReport};
use crate::detection::{ApReport, Label};
use crate::distill::{DistillConfig, Distiller, InitMode, StaticTeacher};
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::model::{
    encode_cnn, encode_foundation, half_resolution, pretrain_foundation, sse_project, Detector, DetectorConfig,
    FoundationPretrain,
};
use crate::synth::Dataset;
use crate::tensor::{Graph, Tensor};
use crate::train::{evaluate_detector, train_supervised, SupervisedConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub supervised: SupervisedConfig,
    pub foundation: FoundationPretrain,
    /// Images drawn from the multi-domain mixture for the foundation encoder.
    pub mixture_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            supervised: SupervisedConfig::default(),
            foundation: FoundationPretrain::default(),
            mixture_size: 800,
        }
    }
}

/// Fresh detector whose frozen foundation encoder is trained on `mixture`
/// and whose student path is trained on the labelled source set.
pub fn pretrain_source(
    config: DetectorConfig,
    source: &Dataset,
    mixture: &[(Tensor, Vec<Label>)],
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<Detector> {
    if source.is_empty() {
        return Err(Error::InvalidArgument("source dataset is empty".into()));
    }
    let mut det = Detector::new(config, seed)?;
    let fcfg = FoundationPretrain {
        seed: cfg.foundation.seed ^ seed,
        ..cfg.foundation
    };
    pretrain_foundation(&det.config.clone(), &mut det.params, mixture, &fcfg)?;
    let scfg = SupervisedConfig {
        seed: cfg.supervised.seed ^ seed,
        ..cfg.supervised
    };
    train_supervised(&mut det, &source.samples(), &scfg)?;
    Ok(det)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Pinned weight; skips the sweep when set.
    pub w_star: Option<f64>,
    /// Weight used without adaptive weighting when none is pinned.
    pub fixed_weight: f64,
    pub candidates: Vec<f64>,
    pub images: usize,
    pub top_k: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            w_star: None,
            fixed_weight: 0.05,
            candidates: default_candidates(),
            images: 50,
            top_k: 10,
        }
    }
}

/// Weight sweep over the first `cfg.images` target images.
pub fn run_sweep(source: &Detector, target: &Dataset, cfg: &SweepConfig) -> Result<StabilityReport> {
    let n = cfg.images.min(target.len());
    select_weight(source, &target.images[..n], &cfg.candidates, cfg.top_k)
}

#[derive(Debug, Clone)]
pub struct AdaptRun {
    /// Final EMA teacher.
    pub teacher: Detector,
    /// Teacher snapshot at the best scheduled evaluation, if any ran.
    pub best: Option<(Detector, f64)>,
    pub w_star: [f64; 3],
    pub stability: Option<StabilityReport>,
    pub metrics: Vec<MetricsRow>,
    pub iterations: usize,
}

impl AdaptRun {
    /// Fusion weights the adapted teacher runs with.
    pub fn weights(&self) -> [f64; 3] {
        self.w_star
    }
}

/// Self-training on unlabelled `target` images. With `eval` given, the
/// teacher is scored every half epoch. The weight comes from the sweep
/// unless pinned, adaptive weighting is off or feature injection is off.
pub fn run_adaptation(
    source: &Detector,
    target: &Dataset,
    eval: Option<&Dataset>,
    cfg: &AdaptConfig,
    sweep: &SweepConfig,
) -> Result<AdaptRun> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("target dataset is empty".into()));
    }
    let (w, stability) = match (cfg.use_ufi, sweep.w_star) {
        (false, _) => (0.0, None),
        (true, Some(w)) => (w, None),
        (true, None) if !cfg.use_daaw => (sweep.fixed_weight, None),
        (true, None) => {
            let r = run_sweep(source, target, sweep)?;
            (r.w_star, Some(r))
        }
    };
    let steps_per_epoch = target.len().div_ceil(cfg.batch);
    let mut adapter = Adapter::new(source, *cfg, [w; 3], steps_per_epoch)?;
    let half = (steps_per_epoch / 2).max(1);
    let mut metrics = Vec::new();
    let mut best: Option<(Detector, f64)> = None;
    for _ in 0..cfg.epochs {
        let order = adapter.epoch_order(target.len());
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Tensor> = chunk.iter().map(|&i| &target.images[i]).collect();
            let mut row = adapter.step(&batch)?;
            if let Some(ev) = eval {
                if adapter.iteration % half == 0 {
                    let ap = evaluate_detector(&adapter.teacher, &ev.images, &ev.labels, &adapter.current_weights(), cfg.use_ufi)?.map;
                    row.eval_ap50 = Some(ap);
                    if best.as_ref().is_none_or(|(_, b)| ap > *b) {
                        best = Some((adapter.teacher.clone(), ap));
                    }
                }
            }
            metrics.push(row);
        }
    }
    Ok(AdaptRun {
        w_star: adapter.final_weights(),
        iterations: adapter.iteration,
        teacher: adapter.teacher,
        best,
        stability,
        metrics,
    })
}

#[derive(Debug, Clone)]
pub struct DistillRun {
    /// Final foundation-free student.
    pub student: Detector,
    pub best: Option<(Detector, f64)>,
    pub metrics: Vec<MetricsRow>,
    pub iterations: usize,
}

/// Distils the adapted model `dsod` (run with `dsod_weights`) into a
/// foundation-free student initialised from `dsod` or from `source`.
pub fn run_distillation(
    dsod: &Detector,
    dsod_weights: [f64; 3],
    source: &Detector,
    target: &Dataset,
    eval: Option<&Dataset>,
    cfg: &DistillConfig,
) -> Result<DistillRun> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("target dataset is empty".into()));
    }
    let init = match cfg.init {
        InitMode::Dsod => dsod,
        InitMode::Source => source,
    };
    let static_teacher = StaticTeacher {
        model: dsod,
        weights: dsod_weights,
    };
    let mut distiller = Distiller::new(init, static_teacher, *cfg)?;
    let steps_per_epoch = target.len().div_ceil(cfg.batch);
    let half = (steps_per_epoch / 2).max(1);
    let mut metrics = Vec::new();
    let mut best: Option<(Detector, f64)> = None;
    for _ in 0..cfg.epochs {
        let order = distiller.epoch_order(target.len());
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Tensor> = chunk.iter().map(|&i| &target.images[i]).collect();
            let mut row = distiller.step(&batch)?;
            if let Some(ev) = eval {
                if distiller.iteration % half == 0 {
                    let ap = evaluate_detector(&distiller.teacher, &ev.images, &ev.labels, &[0.0; 3], false)?.map;
                    row.eval_ap50 = Some(ap);
                    if best.as_ref().is_none_or(|(_, b)| ap > *b) {
                        best = Some((distiller.teacher.clone(), ap));
                    }
                }
            }
            metrics.push(row);
        }
    }
    Ok(DistillRun {
        iterations: distiller.iteration,
        student: distiller.teacher,
        best,
        metrics,
    })
}

/// AP50 report of a model on a labelled dataset. The foundation branch is
/// used whenever the model has one and a weight is non-zero.
pub fn evaluate(det: &Detector, weights: &[f64; 3], ds: &Dataset) -> Result<ApReport> {
    if det.config.num_classes != ds.num_classes() {
        return Err(Error::ClassMismatch {
            model: det.config.num_classes,
            dataset: ds.num_classes(),
        });
    }
    let use_foundation = det.has_foundation() && weights.iter().any(|&w| w != 0.0);
    evaluate_detector(det, &ds.images, &ds.labels, weights, use_foundation)
}

#[derive(Serialize)]
struct ClassRow {
    class_id: usize,
    ap50: Option<f64>,
}

/// `eval.json` with the full report and `eval.csv` with one row per class.
pub fn write_eval(dir: &Path, report: &ApReport) -> Result<()> {
    std::fs::write(dir.join("eval.json"), serde_json::to_string_pretty(report)?)?;
    let mut w = csv::Writer::from_path(dir.join("eval.csv"))?;
    for (class_id, &ap50) in report.per_class.iter().enumerate() {
        w.serialize(ClassRow { class_id, ap50 })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityRow {
    pub checkpoint_id: String,
    pub level: usize,
    pub mean_cos: f64,
    pub mean_abs_cos: f64,
}

/// Mean per-location cosine between each pyramid level and its projected
/// foundation feature, over `images`, for every named model.
pub fn analyze_orthogonality(models: &[(String, &Detector)], images: &[Tensor]) -> Result<Vec<OrthogonalityRow>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("orthogonality analysis needs images".into()));
    }
    let mut rows = Vec::new();
    for (id, det) in models {
        if !det.has_foundation() {
            return Err(Error::Config(format!("model {id} has no foundation branch")));
        }
        let mut sums = [(0.0, 0.0, 0usize); 3];
        for img in images {
            let mut g = Graph::new();
            let cnn = encode_cnn(&mut g, &det.config, &det.params, img)?;
            let f = encode_foundation(&mut g, &det.config, &det.params, &half_resolution(img)?)?;
            for (l, &c) in cnn.iter().enumerate() {
                let p = sse_project(&mut g, &det.config, &det.params, f, l)?;
                let d = det.config.dims[l];
                for (a, b) in g.value(c).data().chunks(d).zip(g.value(p).data().chunks(d)) {
                    let cos = cosine(a, b);
                    sums[l].0 += cos;
                    sums[l].1 += cos.abs();
                    sums[l].2 += 1;
                }
            }
        }
        for (level, &(s, a, n)) in sums.iter().enumerate() {
            rows.push(OrthogonalityRow {
                checkpoint_id: id.clone(),
                level: level + 3,
                mean_cos: s / n as f64,
                mean_abs_cos: a / n as f64,
            });
        }
    }
    Ok(rows)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn write_orthogonality(path: &Path, rows: &[OrthogonalityRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
