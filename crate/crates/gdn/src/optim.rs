//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::tensor::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, count: usize) -> Self {
        Self { cfg, m: vec![0.0; count], v: vec![0.0; count], t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        let g = grads.flatten();
        debug_assert_eq!(g.len(), self.m.len());
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let mut theta = params.flatten();
        for (i, x) in theta.iter_mut().enumerate() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            *x -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * *x);
        }
        params.assign(&theta);
    }
}
