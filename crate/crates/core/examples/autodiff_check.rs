//! Reverse-mode gradients of the detection loss against central differences.

use dsod::detection::{set_detection_loss, BBox, Label, LossWeights};
use dsod::model::{forward, Detector, DetectorConfig, ForwardOptions};
use dsod::tensor::{grad_check, Tensor};

fn main() -> dsod::Result<()> {
    let cfg = DetectorConfig::tiny();
    let mut det = Detector::new(cfg.clone(), 3)?;
    // Zero biases leave dead ReLU units exactly on the kink; shift them off.
    let frozen: Vec<String> = det.params.frozen().map(str::to_string).collect();
    for (k, (name, t)) in det.params.iter_mut().enumerate() {
        if name.ends_with(".b") && !frozen.iter().any(|f| f == name) {
            t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v += 0.01 * ((i + k) % 7) as f64 - 0.03);
        }
    }
    let n = cfg.channels * cfg.height * cfg.width;
    let image = Tensor::new(
        vec![cfg.channels, cfg.height, cfg.width],
        (0..n).map(|i| ((i * 37) % 101) as f64 / 100.0).collect(),
    )?;
    let labels = [Label {
        class_id: 1,
        bbox: BBox::new(0.4, 0.55, 0.3, 0.25),
    }];
    let w = LossWeights::default();
    let err = grad_check(
        |g, p| {
            let out = forward(g, &cfg, p, &image, &[0.2; 3], ForwardOptions { use_foundation: true, mask: None })?;
            set_detection_loss(g, out.preds, &labels, &w)
        },
        &det.params,
        1e-5,
    )?;
    let scalars: usize = det.params.iter().filter(|(n, _)| !det.params.is_frozen(n)).map(|(_, t)| t.numel()).sum();
    println!("{scalars} trainable scalars, max relative error {err:.2e}");
    Ok(())
}
