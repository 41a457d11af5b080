use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, Op, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A trainable tensor with its accumulated gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    value: Tensor,
    grad: Option<Vec<f64>>,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Named parameters in insertion order. Names are unique and shapes never
/// change after insertion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let n = value.len();
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value: value.with_requires_grad(false),
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Restores a parameter together with its optimizer state.
    pub fn insert_with_state(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        m: Vec<f64>,
        v: Vec<f64>,
        step: u64,
    ) -> Result<ParamId> {
        let name = name.into();
        if m.len() != value.len() || v.len() != value.len() {
            return Err(Error::shape("ParamStore::insert_with_state", name));
        }
        let id = self.insert(name, value)?;
        let p = &mut self.params[id.0];
        p.m = m;
        p.v = v;
        p.step = step;
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.param(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrites a parameter's values; the shape must match.
    pub fn set_value(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let p = &mut self.params[id.0];
        if data.len() != p.value.len() {
            return Err(Error::shape(
                "ParamStore::set_value",
                format!("{name}: {} values for shape {:?}", data.len(), p.value.shape()),
            ));
        }
        p.value.data = data;
        Ok(())
    }

    /// Adds the gradients of every parameter bound on `tape` into the store.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) {
        for (i, node) in tape.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = grads.grads.get(i).and_then(|g| g.as_deref()) {
                    let slot = self.params[id.0].grad.get_or_insert_with(|| vec![0.0; g.len()]);
                    for (s, &v) in slot.iter_mut().zip(g) {
                        *s += v;
                    }
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Sets a gradient directly, mostly for tests and external optimizers.
    pub fn set_grad(&mut self, name: &str, grad: Vec<f64>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let p = &mut self.params[id.0];
        if grad.len() != p.value.len() {
            return Err(Error::shape("ParamStore::set_grad", name.to_string()));
        }
        p.grad = Some(grad);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("Adam learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of every parameter; clears gradients.
pub fn adam_step(store: &mut ParamStore, config: &AdamConfig) -> Result<()> {
    config.validate()?;
    if let Some(p) = store.params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    for p in &mut store.params {
        let grad = p.grad.take().expect("checked above");
        p.step += 1;
        let t = p.step as f64;
        let bc1 = 1.0 - config.beta1.powf(t);
        let bc2 = 1.0 - config.beta2.powf(t);
        for (((w, m), v), g) in p
            .value
            .data
            .iter_mut()
            .zip(p.m.iter_mut())
            .zip(p.v.iter_mut())
            .zip(grad)
        {
            *m = config.beta1 * *m + (1.0 - config.beta1) * g;
            *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}
