//! Adam over the adapter's parameter tensors.

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterParams, AdapterShape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub m: AdapterParams,
    pub v: AdapterParams,
}

impl Adam {
    pub fn new(config: AdamConfig, shape: &AdapterShape) -> Self {
        Self {
            config,
            step: 0,
            m: AdapterParams::zeros(shape),
            v: AdapterParams::zeros(shape),
        }
    }

    pub fn update(&mut self, params: &mut AdapterParams, grads: &AdapterParams) {
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let bias1 = 1.0 - c.beta1.powf(t);
        let bias2 = 1.0 - c.beta2.powf(t);
        let step_size = c.learning_rate / bias1;
        let grads = grads.tensors();
        let m = self.m.tensors_mut();
        let v = self.v.tensors_mut();
        for ((((_, p), (_, g)), (_, m)), (_, v)) in
            params.tensors_mut().into_iter().zip(grads).zip(m).zip(v)
        {
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                p[i] -= step_size * m[i] / ((v[i] / bias2).sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let shape = AdapterShape::reduced(64);
        let mut params = AdapterParams::zeros(&shape);
        let mut grads = AdapterParams::zeros(&shape);
        grads.aging_b2[0] = 3.0;
        grads.aging_b2[1] = -1e-3;
        let mut adam = Adam::new(AdamConfig::default(), &shape);
        adam.update(&mut params, &grads);
        // After one step m_hat = g and v_hat = g^2.
        assert!((params.aging_b2[0] + 1e-4).abs() < 1e-11);
        assert!((params.aging_b2[1] - 1e-4 * 1e-3 / (1e-3 + 1e-8)).abs() < 1e-12);
        assert_eq!(params.aging_b2[2], 0.0);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let shape = AdapterShape::reduced(64);
        let mut params = AdapterParams::zeros(&shape);
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                ..Default::default()
            },
            &shape,
        );
        for _ in 0..2000 {
            let mut grads = AdapterParams::zeros(&shape);
            grads.global_b2[0] = 2.0 * (params.global_b2[0] - 1.5);
            adam.update(&mut params, &grads);
        }
        assert!((params.global_b2[0] - 1.5).abs() < 1e-3);
    }
}
