use std::collections::BTreeMap;

use crate::error::{NorError, Result};
use crate::numerics::Tensor;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor together with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether the parameter takes part in the L2 penalty.
    pub regularized: bool,
}

/// Owns every trainable tensor of a model, addressed by [`ParamId`] or name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, regularized: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NorError::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad,
            regularized,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Parameters in lexicographic name order.
    pub fn iter_sorted(&self) -> impl Iterator<Item = &Parameter> {
        self.by_name.values().map(|id| &self.params[id.0])
    }

    /// Total number of scalar entries over all parameters.
    pub fn num_entries(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Sum of squared entries over the regularized parameters.
    pub fn l2_penalty(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.regularized)
            .flat_map(|p| p.value.data())
            .map(|v| v * v)
            .sum()
    }

    /// Replace values from `other`, matching by name and requiring equal shapes.
    pub fn load_values(&mut self, other: &BTreeMap<String, Tensor>) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(NorError::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                other.len(),
                self.params.len()
            )));
        }
        for p in &mut self.params {
            let t = other.get(&p.name).ok_or_else(|| {
                NorError::Checkpoint(format!("parameter `{}` missing from checkpoint", p.name))
            })?;
            if t.shape() != p.value.shape() {
                return Err(NorError::Checkpoint(format!(
                    "parameter `{}` has shape {:?} in checkpoint, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

/// Clamp every gradient entry into `[lo, hi]`.
pub fn clip_gradients(store: &mut ParamStore, lo: f64, hi: f64) {
    for p in store.iter_mut() {
        for g in p.grad.data_mut() {
            *g = g.clamp(lo, hi);
        }
    }
}
