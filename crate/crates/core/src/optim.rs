//! Adam with bias-corrected moments and a step-halving learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::{ParamGrads, Real, SeparableCnn};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self { step_count: 0, first_moment: vec![T::zero(); len], second_moment: vec![T::zero(); len], config }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    ensure!(
        params.len() == grads.len() && params.len() == state.first_moment.len(),
        Shape,
        "adam: {} params, {} grads, {} moments",
        params.len(),
        grads.len(),
        state.first_moment.len()
    );
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(format!("element {i}")));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let correct1 = 1.0 - beta1.powi(t);
    let correct2 = 1.0 - beta2.powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        let g = g.f64();
        let m_new = beta1 * m.f64() + (1.0 - beta1) * g;
        let v_new = beta2 * v.f64() + (1.0 - beta2) * g * g;
        *m = T::of(m_new);
        *v = T::of(v_new);
        let update = lr * (m_new / correct1) / ((v_new / correct2).sqrt() + eps);
        *p = T::of(p.f64() - update);
    }
    Ok(())
}

/// One [`AdamState`] per parameter tensor of a network.
#[derive(Clone, Debug)]
pub struct ModelAdam<T> {
    pub states: Vec<AdamState<T>>,
}

impl<T: Real> ModelAdam<T> {
    pub fn new(model: &SeparableCnn<T>, config: AdamConfig) -> Self {
        Self { states: model.params().iter().map(|p| AdamState::new(p.len(), config)).collect() }
    }

    pub fn step_count(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step_count)
    }

    /// Validates every gradient before touching any parameter, so a
    /// non-finite gradient leaves the model untouched.
    pub fn step(&mut self, model: &mut SeparableCnn<T>, grads: &ParamGrads<T>, lr: f64) -> Result<()> {
        let names = model.param_names();
        ensure!(
            grads.tensors.len() == names.len() && self.states.len() == names.len(),
            Shape,
            "optimizer tracks {} tensors, model has {}, gradients {}",
            self.states.len(),
            names.len(),
            grads.tensors.len()
        );
        for (name, g) in names.iter().zip(&grads.tensors) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        for ((p, g), s) in model.params_mut().into_iter().zip(&grads.tensors).zip(&mut self.states) {
            adam_step(p, g, s, lr)?;
        }
        Ok(())
    }
}

/// `lr(e) = max(floor, initial_lr * 2^-floor(e / halve_every))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub initial_lr: f64,
    /// Epochs between halvings; 0 keeps the rate constant.
    pub halve_every: usize,
    pub floor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial_lr: 0.01, halve_every: 50, floor: 1e-5 }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = epoch.checked_div(self.halve_every).unwrap_or(0);
        let lr = self.initial_lr * 0.5f64.powi(halvings.min(i32::MAX as usize) as i32);
        lr.max(self.floor)
    }
}

pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> f64 {
    schedule.lr_at(epoch)
}
