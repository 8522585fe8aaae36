//! AdamW with decoupled weight decay.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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
        Self {
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state: first and second moments per parameter, allocated at
/// zero the first time a parameter is stepped.
#[derive(Debug, Default)]
pub struct AdamW {
    pub config: AdamWConfig,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            moments: HashMap::new(),
        }
    }

    /// One update of every trainable parameter, then zeroes all gradients.
    /// `step_index` counts from 1 and drives bias correction.
    pub fn step(&mut self, store: &mut ParameterStore, step_index: u64) -> Result<()> {
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        if lr < 0.0 || !lr.is_finite() {
            return Err(Error::Argument(format!("learning rate must be ≥ 0, got {lr}")));
        }
        if step_index == 0 {
            return Err(Error::Argument("step_index starts at 1".into()));
        }
        let t = step_index as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, p) in store.iter_mut() {
            if !p.trainable() {
                continue;
            }
            let n = p.value().len();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grad = p.grad().data().to_vec();
            let theta = p.value_mut().data_mut();
            for i in 0..n {
                let g = grad[i];
                theta[i] -= lr * weight_decay * theta[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseArray;

    fn store_with(theta: f64, grad: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("t", DenseArray::row(vec![theta]), true).unwrap();
        s.accumulate_grad("t", &DenseArray::row(vec![grad])).unwrap();
        s
    }

    #[test]
    fn decay_only_step() {
        let mut s = store_with(2.0, 0.0);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 5e-3,
            weight_decay: 0.01,
            ..AdamWConfig::default()
        });
        opt.step(&mut s, 1).unwrap();
        let got = s.value("t").unwrap().data()[0];
        assert!((got - 2.0 * (1.0 - 5e-5)).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_a_null_step() {
        let mut s = store_with(1.25, 0.7);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.0,
            ..AdamWConfig::default()
        });
        opt.step(&mut s, 1).unwrap();
        assert_eq!(s.value("t").unwrap().data()[0], 1.25);
        assert_eq!(s.param("t").unwrap().grad().data()[0], 0.0);
    }

    #[test]
    fn negative_lr_rejected() {
        let mut s = store_with(1.0, 1.0);
        let mut opt = AdamW::new(AdamWConfig {
            lr: -1e-3,
            ..AdamWConfig::default()
        });
        assert!(opt.step(&mut s, 1).is_err());
    }

    #[test]
    fn scalar_step_matches_hand_rolled_oracle() {
        let (lr, b1, b2, eps) = (5e-3, 0.9, 0.999, 1e-8);
        let mut s = store_with(1.0, 0.5);
        let mut opt = AdamW::new(AdamWConfig {
            lr,
            beta1: b1,
            beta2: b2,
            eps,
            weight_decay: 0.0,
        });
        opt.step(&mut s, 1).unwrap();

        let g: f64 = 0.5;
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1);
        let v_hat = v / (1.0 - b2);
        let expected = 1.0 - lr * m_hat / (v_hat.sqrt() + eps);
        assert!((s.value("t").unwrap().data()[0] - expected).abs() <= 1e-12);
    }

    #[test]
    fn two_steps_match_oracle() {
        let (lr, b1, b2, eps, wd) = (1e-2, 0.9, 0.999, 1e-8, 0.1);
        let mut s = store_with(1.0, 0.5);
        let mut opt = AdamW::new(AdamWConfig {
            lr,
            beta1: b1,
            beta2: b2,
            eps,
            weight_decay: wd,
        });
        opt.step(&mut s, 1).unwrap();
        s.accumulate_grad("t", &DenseArray::row(vec![-0.25])).unwrap();
        opt.step(&mut s, 2).unwrap();

        let (mut th, mut m, mut v) = (1.0f64, 0.0, 0.0);
        for (t, g) in [(1, 0.5f64), (2, -0.25)] {
            th -= lr * wd * th;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            th -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((s.value("t").unwrap().data()[0] - th).abs() <= 1e-12);
    }
}
