use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
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

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u32,
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut [f32], grad: &[f32], state: &mut Moments, cfg: &AdamConfig) -> Result<()> {
    if param.len() != grad.len() {
        return Err(shape_err("adam_step", format!("{} params, {} grads", param.len(), grad.len())));
    }
    if state.m.len() != param.len() {
        state.m = vec![0.0; param.len()];
        state.v = vec![0.0; param.len()];
        state.step = 0;
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - (cfg.beta1 as f64).powi(t);
    let c2 = 1.0 - (cfg.beta2 as f64).powi(t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] as f64 / c1;
        let v_hat = state.v[i] as f64 / c2;
        param[i] -= (cfg.lr as f64 * m_hat / (v_hat.sqrt() + cfg.eps as f64)) as f32;
    }
    Ok(())
}

/// Adam moments keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    slots: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, name: &str, param: &mut [f32], grad: &[f32], cfg: &AdamConfig) -> Result<()> {
        let slot = self.slots.entry(name.to_string()).or_default();
        adam_step(param, grad, slot, cfg)
    }

    /// Update every store entry that has a gradient; `cfg_for` picks the
    /// per-group settings from the parameter name.
    pub fn step_store(
        &mut self,
        store: &mut ParamStore,
        grads: &BTreeMap<String, Vec<f32>>,
        cfg_for: impl Fn(&str) -> AdamConfig,
    ) -> Result<()> {
        for (name, g) in grads {
            let cfg = cfg_for(name);
            let t = store.get_mut(name)?;
            let slot = self.slots.entry(name.clone()).or_default();
            adam_step(t.data_mut(), g, slot, &cfg)?;
        }
        Ok(())
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.slots.get(name)
    }
}
