//! First-order optimizers with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Global L2 clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 3e-3,
            clip_norm: Some(1.0),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        Ok(())
    }
}

/// Scales trainable gradients so their global L2 norm is at most `max_norm`
/// and returns the norm measured before scaling.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in store.iter_mut().filter(|p| p.trainable) {
            p.grad.as_mut_slice().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Matrix> = store
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Ok(Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Clips, updates trainable parameters from their gradients and returns
    /// the pre-clip global gradient norm. Gradients are left in place.
    pub fn step(&mut self, store: &mut ParamStore) -> f64 {
        let pre_clip = match self.config.clip_norm {
            Some(c) => clip_grad_norm(store, c),
            None => store.grad_norm(),
        };
        self.t += 1;
        let lr = self.config.learning_rate;
        let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let w = p.value.as_mut_slice();
            let g = p.grad.as_slice();
            match self.config.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in w.iter_mut().zip(g) {
                        *w -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.m[i].as_mut_slice();
                    let v = self.v[i].as_mut_slice();
                    for j in 0..w.len() {
                        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        w[j] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        pre_clip
    }
}
