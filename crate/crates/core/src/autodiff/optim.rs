use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::{AutodiffError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. Moment buffers are keyed by parameter name.
pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: HashMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently stored on each
    /// parameter. Every parameter must carry a gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(missing) = store.iter().find(|(_, _, t)| t.grad().is_none()) {
            return Err(AutodiffError::MissingGradient(missing.1.to_string()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let tensor = store.tensor_mut(id);
            let grad = tensor.grad().unwrap().to_vec();
            let n = grad.len();
            let mom = self.moments.entry(name).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            for (((p, g), m), v) in tensor
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(mom.m.iter_mut())
                .zip(mom.v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store_with(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.insert("p", Tensor::scalar(value)).unwrap();
        s.tensor_mut(id).set_grad(vec![grad]).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = store_with(0.5, 0.0);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.get("p").unwrap().data(), &[0.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store_with(0.0, 1.0);
        Adam::new(AdamConfig::default()).step(&mut s).unwrap();
        let delta = s.get("p").unwrap().data()[0];
        // closed form: -lr * 1 / (1 + eps)
        assert!((delta + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        let mut s = store_with(0.0, 0.3);
        let mut adam = Adam::new(AdamConfig::default());
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..1000 {
            adam.step(&mut s).unwrap();
            let p = s.get("p").unwrap().data()[0];
            last_delta = p - prev;
            prev = p;
        }
        assert!((last_delta.abs() - 0.001).abs() < 1e-9, "{last_delta}");
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(1.0)).unwrap();
        let err = Adam::new(AdamConfig::default()).step(&mut s).unwrap_err();
        assert_eq!(err, AutodiffError::MissingGradient("w".into()));
    }
}
