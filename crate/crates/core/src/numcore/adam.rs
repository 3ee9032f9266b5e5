use alloc::vec::Vec;

use thiserror::Error;

use super::Tensor;
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("expected {expected} gradient tensors, got {found}")]
    Count { expected: usize, found: usize },
    #[error("tensor {index}: gradient shape {grad:?} does not match parameter {param:?}")]
    Shape {
        index: usize,
        param: [usize; 2],
        grad: [usize; 2],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdamOutcome {
    Applied,
    /// Some gradient entry was NaN or infinite; nothing changed.
    Skipped,
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    skipped: u64,
}

impl Adam {
    /// Moment buffers shaped like `params`.
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<AdamOutcome, OptimError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(OptimError::Count {
                expected: self.m.len(),
                found: grads.len().min(params.len()),
            });
        }
        for (index, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[index].shape() {
                return Err(OptimError::Shape {
                    index,
                    param: p.shape(),
                    grad: g.shape(),
                });
            }
        }
        if !grads.iter().all(Tensor::is_finite) {
            self.skipped += 1;
            return Ok(AdamOutcome::Skipped);
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            for (k, &gk) in g.data().iter().enumerate() {
                let mk = &mut m.data_mut()[k];
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                let mhat = *mk / bc1;
                let vk = &mut v.data_mut()[k];
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let vhat = *vk / bc2;
                pd[k] -= lr * mhat / (util::sqrt(vhat) + eps);
            }
        }
        Ok(AdamOutcome::Applied)
    }
}
