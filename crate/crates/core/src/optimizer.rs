//! Adam with bias correction and step-decay learning-rate schedules.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{VectorContainer, OPTIM_MAGIC};
use crate::error::{Error, Result};
use crate::trajectory::fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient to this L2 norm when it is larger.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("Adam eps must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                format!("{} parameters and gradients", self.m.len()),
                format!("{} parameters, {} gradients", params.len(), grads.len()),
            ));
        }
        let scale = match self.config.clip_norm {
            Some(c) => {
                let n = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i] * scale;
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }

    /// Zero the moments and the step counter.
    pub fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.step = 0;
    }

    pub fn hash(&self) -> u64 {
        fnv1a(
            self.m
                .iter()
                .chain(&self.v)
                .flat_map(|x| x.to_le_bytes())
                .chain(self.step.to_le_bytes()),
        )
    }

    pub fn save(&self, path: &Path, config_hash: u64) -> Result<()> {
        VectorContainer {
            config_hash,
            step: self.step,
            vectors: vec![self.m.clone(), self.v.clone()],
        }
        .save(path, OPTIM_MAGIC)
    }

    pub fn load(path: &Path, config: AdamConfig, config_hash: u64) -> Result<Self> {
        let c = VectorContainer::load(path, OPTIM_MAGIC, "OPTM")?;
        if c.config_hash != config_hash {
            return Err(Error::Config(format!("{}: optimizer state belongs to another configuration", path.display())));
        }
        let [m, v]: [Vec<f64>; 2] = c
            .vectors
            .try_into()
            .map_err(|v: Vec<Vec<f64>>| Error::shape("2 moment vectors", v.len().to_string()))?;
        Ok(Self {
            config,
            m,
            v,
            step: c.step,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayKind {
    /// `lr = base * decay ^ floor(epoch / period)`.
    MultiplicativeStep,
    /// `lr = base - decay * floor(epoch / period)`.
    SubtractiveStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub kind: DecayKind,
    pub base_lr: f64,
    pub decay: f64,
    pub period_epochs: usize,
}

impl LrSchedule {
    pub fn multiplicative(base_lr: f64, factor: f64, period_epochs: usize) -> Self {
        Self {
            kind: DecayKind::MultiplicativeStep,
            base_lr,
            decay: factor,
            period_epochs,
        }
    }

    /// Checks that every learning rate up to `max_epoch` is positive.
    pub fn validate(&self, max_epoch: usize) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base learning rate {} must be positive", self.base_lr)));
        }
        if self.period_epochs == 0 {
            return Err(Error::Config("learning-rate decay period must be at least one epoch".into()));
        }
        match self.kind {
            DecayKind::MultiplicativeStep if !(self.decay > 0.0 && self.decay <= 1.0) => {
                Err(Error::Config(format!("multiplicative decay {} must lie in (0, 1]", self.decay)))
            }
            _ if !(self.lr_at_epoch(max_epoch) > 0.0) => Err(Error::Config(format!(
                "learning rate reaches {} by epoch {max_epoch}",
                self.lr_at_epoch(max_epoch)
            ))),
            _ => Ok(()),
        }
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let k = (epoch / self.period_epochs.max(1)) as i32;
        match self.kind {
            DecayKind::MultiplicativeStep => self.base_lr * self.decay.powi(k),
            DecayKind::SubtractiveStep => self.base_lr - self.decay * k as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subtractive_schedule_going_negative_is_rejected() {
        let s = LrSchedule {
            kind: DecayKind::SubtractiveStep,
            base_lr: 1e-4,
            decay: 5e-3,
            period_epochs: 30,
        };
        assert!(s.validate(29).is_ok());
        assert!(s.validate(30).is_err());
        assert!(LrSchedule::multiplicative(0.1, 0.0, 3).validate(10).is_err());
        assert!(LrSchedule::multiplicative(0.1, 0.5, 0).validate(10).is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut s = AdamState::new(3, AdamConfig::default());
        assert!(s.step(&mut [0.0; 2], &[0.0; 3], 0.1).is_err());
    }
}
