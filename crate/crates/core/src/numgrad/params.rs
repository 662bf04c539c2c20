use std::collections::BTreeMap;

use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor2,
    pub grad: Tensor2,
    m: Tensor2,
    v: Tensor2,
    steps: u64,
    touched: bool,
}

impl Parameter {
    fn new(value: Tensor2) -> Self {
        let (r, c) = value.shape();
        Parameter {
            grad: Tensor2::zeros(r, c),
            m: Tensor2::zeros(r, c),
            v: Tensor2::zeros(r, c),
            value,
            steps: 0,
            touched: false,
        }
    }

    /// Number of optimizer updates applied to this parameter.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Whether a gradient was written since the last optimizer step.
    pub fn has_grad(&self) -> bool {
        self.touched
    }
}

/// Named parameters with gradient slots and adaptive-moment state.
///
/// Iteration order is lexicographic by name, which keeps serialization and
/// optimizer updates deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) {
        self.params.insert(name.into(), Parameter::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.params
            .get(name)
            .ok_or_else(|| Error::State(format!("unknown parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2> {
        Ok(&self.get(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor2> {
        Ok(&self.get(name)?.grad)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::State(format!("unknown parameter `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Parameter values only, keyed by name.
    pub fn values(&self) -> BTreeMap<String, Tensor2> {
        self.params
            .iter()
            .map(|(k, p)| (k.clone(), p.value.clone()))
            .collect()
    }

    /// Names starting with `prefix`.
    pub fn values_with_prefix(&self, prefix: &str) -> BTreeMap<String, Tensor2> {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, p)| (k.clone(), p.value.clone()))
            .collect()
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor2) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("gradient for unknown parameter `{name}`")))?;
        p.grad.add_assign(grad)?;
        p.touched = true;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(0.0);
            p.touched = false;
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Clears gradients and adaptive-moment state, keeping the values.
    pub fn reset_optimizer(&mut self) {
        for p in self.params.values_mut() {
            let value = std::mem::replace(&mut p.value, Tensor2::zeros(0, 0));
            *p = Parameter::new(value);
        }
    }

    pub fn round_to_f32(&mut self) {
        for p in self.params.values_mut() {
            p.value = p.value.round_to_f32();
        }
    }
}

/// Adaptive-moment optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One adaptive-moment update of every parameter that received a gradient
/// since the last step. Gradients are cleared afterwards.
pub fn optimizer_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(Error::Parameter(format!("learning rate must be > 0, got {}", cfg.lr)));
    }
    if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) || !(cfg.eps > 0.0) {
        return Err(Error::Parameter("betas must lie in [0, 1) and eps > 0".into()));
    }
    for (name, p) in store.params.iter_mut() {
        if !p.touched {
            continue;
        }
        p.grad.ensure_finite(name)?;
        p.steps += 1;
        let t = p.steps as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let g = p.grad.data();
        let m = p.m.data_mut();
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = p.v.data_mut();
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let (m, v) = (p.m.data(), p.v.data());
        for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            *w -= cfg.lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
        }
        p.grad.data_mut().fill(0.0);
        p.touched = false;
    }
    Ok(())
}
