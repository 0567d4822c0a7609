use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. Moment buffers are created lazily per
/// parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: IndexMap<String, Moments>,
    lr_scale: Vec<(String, f64)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: IndexMap::new(),
            lr_scale: Vec::new(),
        }
    }

    /// Multiplies the learning rate of every parameter whose name starts
    /// with `prefix`. The first matching prefix wins.
    pub fn with_lr_scale(mut self, prefix: &str, factor: f64) -> Self {
        self.lr_scale.push((prefix.to_string(), factor));
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every non-frozen parameter and clears all grads.
    /// Every non-frozen parameter must carry a gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        let missing: Vec<String> = params
            .iter()
            .filter(|(n, t)| !params.is_frozen(n) && t.grad().is_none())
            .map(|(n, _)| n.to_string())
            .collect();
        if let Some(name) = missing.into_iter().next() {
            return Err(Error::MissingGrad(name));
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        let frozen: Vec<String> = params.frozen().map(str::to_string).collect();
        for (name, t) in params.iter_mut() {
            if frozen.iter().any(|f| f == name) {
                t.zero_grad();
                continue;
            }
            let g = t.grad.take().expect("checked above");
            let lr = lr * self
                .lr_scale
                .iter()
                .find(|(p, _)| name.starts_with(p.as_str()))
                .map_or(1.0, |&(_, f)| f);
            let mom = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            for (((p, g), m), v) in t
                .data
                .iter_mut()
                .zip(&g)
                .zip(mom.m.iter_mut())
                .zip(mom.v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
