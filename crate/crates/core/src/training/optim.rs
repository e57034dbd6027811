use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{for_each_param, Module};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, config: AdamConfig) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid("Adam::new", format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            lr,
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every parameter from its accumulated gradient and replaces it
    /// with a fresh leaf, which also clears the gradient. Parameters without
    /// a gradient are treated as having a zero one.
    pub fn step<M: Module + ?Sized>(&mut self, model: &mut M) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let lr = self.lr;
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        for_each_param(model, |_, _, t| {
            if ms.len() <= idx {
                ms.push(vec![0.0; t.numel()]);
                vs.push(vec![0.0; t.numel()]);
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            let g = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
            let mut data = t.data().to_vec();
            for i in 0..data.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                data[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            }
            *t = Tensor::new(t.shape(), data).expect("same shape").requires_grad(true);
            idx += 1;
        });
    }
}
