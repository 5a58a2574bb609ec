use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
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
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment accumulators for one parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient had a NaN or infinite entry; nothing changed.
    SkippedNonFinite,
}

impl AdamState {
    pub fn new(params: &[&Tensor], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<StepOutcome> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                expected: format!("{} parameter tensors", self.m.len()),
                got: format!("{} params, {} grads", params.len(), grads.len()),
            });
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.m).enumerate() {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    expected: format!("tensor {i} of shape {:?}", m.shape()),
                    got: format!("param {:?}, grad {:?}", p.shape(), g.shape()),
                });
            }
        }
        if grads.iter().any(|g| !g.all_finite()) {
            log::warn!("adam: non-finite gradient at step {}, update skipped", self.step + 1);
            return Ok(StepOutcome::SkippedNonFinite);
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
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(StepOutcome::Applied)
    }
}
