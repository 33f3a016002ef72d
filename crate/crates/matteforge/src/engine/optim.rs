//! Adam optimizer and the warmup + cosine-annealing learning-rate schedule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{MatteError, Result};
use crate::scalar::Scalar;

use super::Tensor;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first and second moments, keyed by parameter name.
pub struct AdamState<S: Scalar> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: HashMap<String, Vec<S>>,
    pub v: HashMap<String, Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// One Adam update with bias correction. Parameters with no accumulated
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &[(String, Tensor<S>)], lr: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(MatteError::InvalidArgument(format!(
                "adam_step: lr must be positive, got {lr}"
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = S::from_f64_lossy(self.cfg.beta1);
        let b2 = S::from_f64_lossy(self.cfg.beta2);
        let eps = S::from_f64_lossy(self.cfg.eps);
        let lr = S::from_f64_lossy(lr);
        let bc1 = S::one() - b1.powi(t);
        let bc2 = S::one() - b2.powi(t);

        for (name, p) in params {
            let n = p.numel();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![S::zero(); n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![S::zero(); n]);
            if m.len() != n {
                return Err(MatteError::shape("adam moment", &[m.len()], p.shape()));
            }
            let grad = p.grad();
            if let Some(g) = &grad {
                if g.len() != n {
                    return Err(MatteError::shape("adam gradient", &[g.len()], p.shape()));
                }
            }
            let mut data = p.data_mut();
            for i in 0..n {
                let g = grad.as_ref().map_or(S::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (S::one() - b1) * g;
                v[i] = b2 * v[i] + (S::one() - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] = data[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 followed by cosine decay to `min_lr`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub min_lr: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64, min_lr: f64) -> Result<Self> {
        if warmup_steps >= total_steps {
            return Err(MatteError::Config(format!(
                "lr schedule: warmup_steps {warmup_steps} must be < total_steps {total_steps}"
            )));
        }
        Ok(LrSchedule {
            base_lr,
            warmup_steps,
            total_steps,
            min_lr,
        })
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(MatteError::InvalidArgument(format!(
                "lr_at: step {step} out of range 0..={}",
                self.total_steps
            )));
        }
        if step < self.warmup_steps {
            return Ok(self.base_lr * step as f64 / self.warmup_steps as f64);
        }
        let t = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        Ok(self.min_lr + (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0)
    }
}
