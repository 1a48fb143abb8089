use serde::{Deserialize, Serialize};

use super::{ParamSet, Real};
use crate::error::{config_err, domain_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    /// L2 penalty folded into the gradient before the momentum update.
    pub weight_decay: f64,
    pub nesterov: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 5e-4,
            nesterov: true,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(config_err!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        Ok(())
    }
}

/// Stochastic gradient descent with (optionally Nesterov) momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<F> {
    pub config: SgdConfig,
    buffers: Vec<Vec<F>>,
}

impl<F: Real> Sgd<F> {
    pub fn new(config: SgdConfig, params: &ParamSet<F>) -> Self {
        let buffers = params.params.iter().map(|p| vec![F::ZERO; p.len()]).collect();
        Self { config, buffers }
    }

    pub fn buffers(&self) -> &[Vec<F>] {
        &self.buffers
    }

    pub fn load_buffers(&mut self, buffers: Vec<Vec<F>>) -> Result<()> {
        if buffers.len() != self.buffers.len()
            || buffers.iter().zip(&self.buffers).any(|(a, b)| a.len() != b.len())
        {
            return Err(crate::error::shape_err!("momentum buffers do not match the model"));
        }
        self.buffers = buffers;
        Ok(())
    }

    /// Applies one update at learning rate `lr` and clears the gradients.
    pub fn step(&mut self, params: &mut ParamSet<F>, lr: f64) {
        let lr = F::from_f64(lr);
        let m = F::from_f64(self.config.momentum);
        let wd = F::from_f64(self.config.weight_decay);
        let nesterov = self.config.nesterov;
        for (p, buf) in params.params.iter_mut().zip(&mut self.buffers) {
            for ((x, g), b) in p.value.iter_mut().zip(&mut p.grad).zip(buf.iter_mut()) {
                let mut d = *g + wd * *x;
                *b = m * *b + d;
                if nesterov {
                    d += m * *b;
                } else {
                    d = *b;
                }
                *x -= lr * d;
                *g = F::ZERO;
            }
        }
        params.touch();
    }
}

/// `0.5 * base * (1 + cos(pi * epoch / total))`.
pub fn cosine_lr(epoch: usize, total: usize, base: f64) -> Result<f64> {
    if total == 0 {
        return Err(domain_err!("cosine schedule needs at least one epoch"));
    }
    if epoch >= total {
        return Err(domain_err!("epoch {epoch} outside schedule of {total} epochs"));
    }
    let t = epoch as f64 / total as f64;
    Ok(0.5 * base * (1.0 + (std::f64::consts::PI * t).cos()))
}
