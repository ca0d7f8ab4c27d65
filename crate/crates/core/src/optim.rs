//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::networks::NetworkState;
use crate::ops::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            bail!(Config, "invalid Adam settings {self:?}");
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor, in visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    steps: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            steps: 0,
            moments: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn update(config: &AdamConfig, t: u64, slot: &mut (Vec<f64>, Vec<f64>), p: &mut Param) {
        let bc1 = 1.0 - libm::pow(config.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(config.beta2, t as f64);
        let (value, grad) = p.value_and_grad();
        if slot.0.len() != value.len() {
            *slot = (vec![0.0; value.len()], vec![0.0; value.len()]);
        }
        let (m, v) = slot;
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] -= config.lr * m_hat / (libm::sqrt(v_hat) + config.eps);
        }
    }

    /// One update of every parameter of `params` from its accumulated
    /// gradient.
    pub fn step_params(&mut self, params: &mut [Param]) {
        self.steps += 1;
        self.moments.resize(params.len().max(self.moments.len()), (Vec::new(), Vec::new()));
        for (slot, p) in self.moments.iter_mut().zip(params.iter_mut()) {
            Self::update(&self.config, self.steps, slot, p);
        }
    }

    /// One update of every network parameter; bumps the network version.
    pub fn step(&mut self, net: &mut NetworkState) {
        self.steps += 1;
        let t = self.steps;
        let config = self.config;
        let moments = &mut self.moments;
        let mut idx = 0;
        net.visit_params_mut(&mut |_, p| {
            if idx == moments.len() {
                moments.push((Vec::new(), Vec::new()));
            }
            Self::update(&config, t, &mut moments[idx], p);
            idx += 1;
        });
        net.bump_version();
    }
}
