//! Supervised training on labelled images and AP evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{augment, AugmentConfig, AugmentMode};
use crate::detection::{ap50, set_detection_loss, ApReport, Detection, Label, LossWeights};
use crate::error::{Error, Result};
use crate::model::{Detector, ForwardOptions};
use crate::tensor::{Adam, AdamConfig, Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Fraction of final epochs trained at a tenth of `lr`.
    pub decay_frac: f64,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch: 8,
            lr: 1e-3,
            decay_frac: 0.3,
            seed: 0,
        }
    }
}

/// Trains the foundation-free path of `det` on labelled samples with
/// flip augmentation. Returns the mean loss of every optimizer step.
pub fn train_supervised(det: &mut Detector, samples: &[(Tensor, Vec<Label>)], cfg: &SupervisedConfig) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let weights = LossWeights::default();
    let aug = AugmentConfig::default();
    let batch = cfg.batch.max(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::new();
    let mut trainable = det.params.clone();
    // Only the student tower and head take part.
    let branch: Vec<String> = trainable
        .names()
        .filter(|n| crate::model::is_foundation_branch(n))
        .map(str::to_string)
        .collect();
    for n in &branch {
        trainable.remove(n);
    }
    let decay_from = cfg.epochs - (cfg.epochs as f64 * cfg.decay_frac).round() as usize;
    for epoch in 0..cfg.epochs {
        adam.config.lr = if epoch >= decay_from { cfg.lr / 10.0 } else { cfg.lr };
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut total = 0.0;
            for &i in chunk {
                let (img, labels) = augment(&samples[i].0, &samples[i].1, AugmentMode::Weak, &aug, &mut rng)?;
                let mut g = Graph::new();
                let out = crate::model::forward(&mut g, &det.config, &trainable, &img, &[0.0; 3], ForwardOptions::default())?;
                let loss = set_detection_loss(&mut g, out.preds, &labels, &weights)?;
                total += g.item(loss);
                trainable.accumulate(&g.backward(loss)?);
            }
            trainable.scale_grads(1.0 / chunk.len() as f64);
            adam.step(&mut trainable)?;
            trace.push(total / chunk.len() as f64);
        }
    }
    for (name, t) in trainable.iter() {
        *det.params.get_mut(name)? = t.clone();
    }
    Ok(trace)
}

/// Final detections of `det` on every image.
pub fn detect_all(det: &Detector, images: &[Tensor], weights: &[f64; 3], use_foundation: bool) -> Result<Vec<Vec<Detection>>> {
    images.iter().map(|img| det.detect(img, weights, use_foundation)).collect()
}

/// AP50 of `det` on labelled images.
pub fn evaluate_detector(
    det: &Detector,
    images: &[Tensor],
    labels: &[Vec<Label>],
    weights: &[f64; 3],
    use_foundation: bool,
) -> Result<ApReport> {
    let preds = detect_all(det, images, weights, use_foundation)?;
    Ok(ap50(&preds, labels, det.config.num_classes))
}
