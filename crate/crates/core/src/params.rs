//! Named, ordered parameter storage and per-graph binding.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use spikefuse_tensor::{Gradients, Graph, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in store order.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters in creation order. Values are kept representable in `f32` so
/// checkpoints round-trip exactly.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

pub fn round_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; panics on duplicate names (a construction bug).
    pub fn add(&mut self, name: impl Into<String>, mut value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        round_f32(&mut value);
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn full(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, value))
    }

    pub fn uniform(&mut self, name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_vec(shape, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set(&mut self, name: &str, mut value: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Shape(format!(
                "parameter `{name}`: expected shape {:?}, got {:?}",
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        round_f32(&mut value);
        self.values[id.0] = value;
        Ok(())
    }

    /// Adds every parameter to `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| g.param(v.clone())).collect(),
        }
    }

    /// Like [`ParamStore::bind`] but as constants (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| g.constant(v.clone())).collect(),
        }
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.values.clone()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.values.iter().map(|v| Tensor::zeros(v.shape().to_vec())).collect()
    }
}

/// Graph variables for every parameter of a store.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps variables listed in store order (e.g. gradient-check inputs).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Adds this graph's gradients into `acc` (indexed like the store).
    pub fn accumulate(&self, grads: &Gradients, acc: &mut [Tensor]) {
        for (var, a) in self.vars.iter().zip(acc) {
            if let Some(gr) = grads.get(*var) {
                a.add_assign(gr);
            }
        }
    }
}
