use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detection::Label;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    Weak,
    Strong,
}

/// Augmentation strengths. Weak mode only uses `flip_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub noise_std: f64,
    /// Per-channel gain drawn from `[1 - gain, 1 + gain]`.
    pub gain: f64,
    /// Contrast reduction about the image mean: the factor is drawn from `[1 - contrast, 1]`.
    pub contrast: f64,
    pub erase_count: usize,
    /// Largest side of an erased rectangle, in pixels.
    pub erase_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            noise_std: 0.04,
            gain: 0.05,
            contrast: 0.7,
            erase_count: 1,
            erase_size: 12,
        }
    }
}

impl AugmentConfig {
    pub fn no_strong(self) -> Self {
        Self {
            noise_std: 0.0,
            gain: 0.0,
            contrast: 0.0,
            erase_count: 0,
            ..self
        }
    }
}

fn flip_image(img: &Tensor) -> Tensor {
    let &[c, h, w] = img.shape() else { unreachable!("checked by caller") };
    let src = img.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * h + y) * w;
            for x in 0..w {
                out[row + x] = src[row + w - 1 - x];
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("same shape")
}

/// Weak: random horizontal flip. Strong: the weak transform followed by
/// per-channel gain, contrast jitter, Gaussian pixel noise and random erasing. Only the flip
/// moves geometry, and labels follow it.
pub fn augment<R: Rng + ?Sized>(
    image: &Tensor,
    labels: &[Label],
    mode: AugmentMode,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Tensor, Vec<Label>)> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::Shape {
            op: "augment",
            lhs: image.shape().to_vec(),
            rhs: vec![],
        });
    };
    let flip = rng.random::<f64>() < cfg.flip_prob;
    let (mut img, labels) = if flip {
        let l = labels
            .iter()
            .map(|l| Label {
                class_id: l.class_id,
                bbox: l.bbox.flip_horizontal(),
            })
            .collect();
        (flip_image(image), l)
    } else {
        (image.clone(), labels.to_vec())
    };
    if mode == AugmentMode::Weak {
        return Ok((img, labels));
    }
    let data = img.data_mut();
    if cfg.gain > 0.0 {
        for plane in data.chunks_mut(h * w) {
            let k = rng.random_range(1.0 - cfg.gain..=1.0 + cfg.gain);
            plane.iter_mut().for_each(|v| *v *= k);
        }
    }
    if cfg.contrast > 0.0 {
        let k = rng.random_range(1.0 - cfg.contrast..=1.0);
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        data.iter_mut().for_each(|v| *v = mean + k * (*v - mean));
    }
    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        data.iter_mut().for_each(|v| *v += noise.sample(rng));
    }
    for _ in 0..cfg.erase_count {
        let size = cfg.erase_size.clamp(1, h.min(w));
        let eh = rng.random_range(1..=size);
        let ew = rng.random_range(1..=size);
        let y0 = rng.random_range(0..=h - eh);
        let x0 = rng.random_range(0..=w - ew);
        let fill = rng.random::<f64>();
        for ch in 0..c {
            for y in y0..y0 + eh {
                let row = (ch * h + y) * w;
                data[row + x0..row + x0 + ew].fill(fill);
            }
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok((img, labels))
}
