//! AdamW with decoupled weight decay and the step-down learning-rate
//! schedule.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer moments; one buffer per parameter in store order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| alloc::vec![0.0; store.get(id).len()]).collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update at learning rate `lr`; non-finite gradients abort before
    /// any parameter changes.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::config("optimizer state does not match the parameter store"));
        }
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::Divergence(alloc::format!(
                "non-finite gradient for {}",
                store.name(store.ids().nth(i).expect("index"))
            )));
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - math::powi(c.beta1, self.step);
        let bc2 = 1.0 - math::powi(c.beta2, self.step);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads[i].data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                p[j] -= lr * c.weight_decay * p[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (math::sqrt(vh) + c.eps);
            }
        }
        Ok(())
    }
}

/// Constant rate with a ×`final_factor` drop in the last epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub final_factor: f64,
    pub epochs: usize,
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        if self.epochs > 1 && epoch + 1 >= self.epochs {
            self.base * self.final_factor
        } else {
            self.base
        }
    }
}
