use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParamGrads, ParamSet};
use crate::error::{Error, Result};

/// A first-order update rule over a [`ParamSet`].
pub trait Optimizer {
    fn step(&mut self, params: &mut ParamSet, grads: &ParamGrads) -> Result<()>;
}

fn aligned<'a>(params: &'a mut ParamSet, name: &str, grad: &[f64]) -> Result<&'a mut [f64]> {
    let p = params
        .get_mut(name)
        .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter `{name}`")))?;
    if p.numel() != grad.len() {
        return Err(Error::ShapeMismatch {
            op: "optimizer step",
            left: p.shape().to_vec(),
            right: vec![grad.len()],
        });
    }
    Ok(p.data_mut())
}

/// Plain gradient descent, `p <- p - lr * g`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamSet, grads: &ParamGrads) -> Result<()> {
        for (name, g) in grads {
            if params.is_frozen(name) {
                continue;
            }
            let p = aligned(params, name, g.data())?;
            p.iter_mut().zip(g.data()).for_each(|(p, g)| *p -= self.lr * g);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<LrDecay>,
}

/// Constant `lr` for the first `start` updates, then geometric decay to
/// `final_lr` at update `steps`, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub final_lr: f64,
    pub steps: u64,
    #[serde(default)]
    pub start: u64,
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            decay: None,
        }
    }

    /// Learning rate for update number `t` (starting at 1).
    pub fn lr_at(&self, t: u64) -> f64 {
        match self.decay {
            Some(LrDecay { final_lr, steps, start }) if steps > start => {
                let done = t.saturating_sub(1).clamp(start, steps) - start;
                let frac = done as f64 / (steps - start) as f64;
                self.lr * (final_lr / self.lr).powf(frac)
            }
            _ => self.lr,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamSet, grads: &ParamGrads) -> Result<()> {
        if self.config.lr <= 0.0 || self.config.decay.is_some_and(|d| d.final_lr <= 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        self.t += 1;
        let lr = self.config.lr_at(self.t);
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, g) in grads {
            if params.is_frozen(name) {
                continue;
            }
            let p = aligned(params, name, g.data())?;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.numel()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.numel()]);
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
