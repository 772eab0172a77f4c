use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Each parameter owns a slot; call
/// [`Adam::next_step`] once per optimization step, then [`Adam::update`] for
/// every slot.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Adam {
            config,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn next_step(&mut self) {
        self.t += 1;
    }

    /// Applies one update to `param`. A non-finite gradient or result is an
    /// error naming the parameter, and leaves `param` untouched.
    pub fn update(&mut self, slot: usize, name: &str, param: &mut [f64], grad: &[f64]) -> Result<()> {
        assert!(self.t > 0, "next_step must be called before update");
        assert_eq!(param.len(), grad.len(), "gradient shape for {name}");
        assert_eq!(param.len(), self.m[slot].len(), "slot size for {name}");
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient in {name} at index {i}")));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        let mut next = Vec::with_capacity(param.len());
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            next.push(param[i] - step);
        }
        if let Some(i) = next.iter().position(|p| !p.is_finite()) {
            return Err(Error::Training(format!("parameter {name} became non-finite at index {i}")));
        }
        param.copy_from_slice(&next);
        Ok(())
    }
}
