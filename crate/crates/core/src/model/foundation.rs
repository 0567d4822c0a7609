//! One-off training of the foundation surrogate. A throwaway linear probe
//! decodes detections from the foundation grid; after training only the
//! encoder weights are kept, and they are frozen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{decode_boxes, encode_foundation, half_resolution, DetectorConfig};
use crate::detection::{set_detection_loss, Label, LossWeights, PredVars};
use crate::error::Result;
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoundationPretrain {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FoundationPretrain {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch: 4,
            lr: 2e-3,
            seed: 0,
        }
    }
}

const ENCODER_KEYS: [&str; 4] = ["foundation.fc1.w", "foundation.fc1.b", "foundation.fc2.w", "foundation.fc2.b"];

/// Trains `foundation.*` in `params` on `samples` and leaves it frozen.
/// Returns the per-step mean loss.
pub fn pretrain_foundation(
    cfg: &DetectorConfig,
    params: &mut ParamStore,
    samples: &[(Tensor, Vec<Label>)],
    opts: &FoundationPretrain,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Ok(vec![]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = ParamStore::new();
    for k in ENCODER_KEYS {
        work.insert(k, params.get(k)?.clone());
    }
    let out = cfg.num_classes + 4;
    let d = cfg.foundation_dim;
    work.insert("probe.w", Tensor::randn(&[d, out], 0.01, &mut rng));
    let prior = -99f64.ln();
    let mut b = vec![0.0; out];
    b[..cfg.num_classes].fill(prior);
    work.insert("probe.b", Tensor::new(vec![out], b)?);

    let halves: Vec<Tensor> = samples
        .iter()
        .map(|(img, _)| half_resolution(img))
        .collect::<Result<_>>()?;
    let weights = LossWeights::default();
    let mut adam = Adam::new(AdamConfig {
        lr: opts.lr,
        ..AdamConfig::default()
    });
    let grid = [cfg.foundation_grid()];
    let batch = opts.batch.max(1);
    let mut trace = Vec::with_capacity(opts.steps);
    for _ in 0..opts.steps {
        let mut total = 0.0;
        for _ in 0..batch {
            let i = rng.random_range(0..samples.len());
            let mut g = Graph::new();
            let f = encode_foundation(&mut g, cfg, &work, &halves[i])?;
            let pw = g.param(&work, "probe.w")?;
            let pb = g.param(&work, "probe.b")?;
            let raw = g.linear(f, pw, pb)?;
            let logits = g.slice_cols(raw, 0, cfg.num_classes)?;
            let box_raw = g.slice_cols(raw, cfg.num_classes, out)?;
            let boxes = decode_boxes(&mut g, box_raw, &grid)?;
            let loss = set_detection_loss(&mut g, PredVars { logits, boxes }, &samples[i].1, &weights)?;
            total += g.item(loss);
            work.accumulate(&g.backward(loss)?);
        }
        work.scale_grads(1.0 / batch as f64);
        adam.step(&mut work)?;
        trace.push(total / batch as f64);
    }
    for k in ENCODER_KEYS {
        // the frozen flag only guards optimization; weights are replaced here once
        *params.get_mut(k)? = work.get(k)?.clone();
        params.get_mut(k)?.zero_grad();
        params.freeze(k)?;
    }
    Ok(trace)
}
