use serde::{Deserialize, Serialize};

use super::{Gradients, NetworkParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators laid out like `NetworkParams::tensors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, params: &NetworkParams) -> bool {
        let t = params.tensors();
        t.len() == self.m.len()
            && t.len() == self.v.len()
            && t.iter()
                .zip(&self.m)
                .zip(&self.v)
                .all(|((p, m), v)| p.len() == m.len() && p.len() == v.len())
    }

    /// One bias-corrected update of `params` along `grads`.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients) -> Result<()> {
        if !self.matches(params) || grads.tensors().len() != self.m.len() {
            return Err(Error::Contract(
                "optimizer state does not match parameter shapes".into(),
            ));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
