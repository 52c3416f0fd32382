//! Named trainable tensors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors.
///
/// Names are dotted paths (`V1.cbam.mlp1.weight`); insertion order is the
/// canonical order used by optimizers and checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// He-uniform initialisation in `±sqrt(6 / fan_in)`.
    pub fn add_fan_in<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::uniform(shape, -bound, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        ParamVars(self.tensors.iter().map(|t| tape.leaf(t.clone())).collect())
    }

    /// Replaces all values, checking names and shapes line up.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::CheckpointMismatch(format!(
                "model has {} tensors, checkpoint has {}",
                self.len(),
                other.len()
            )));
        }
        for (i, (name, t)) in other.iter().enumerate() {
            if name != self.names[i] {
                return Err(Error::CheckpointMismatch(format!(
                    "tensor {i}: expected `{}`, found `{name}`",
                    self.names[i]
                )));
            }
            if t.shape() != self.tensors[i].shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "`{name}`: expected shape {:?}, found {:?}",
                    self.tensors[i].shape(),
                    t.shape()
                )));
            }
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }
}

/// Tape handles for a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    /// Gradients for every parameter, zeros where the loss does not reach.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.0.iter().map(|&v| tape.grad_or_zeros(v)).collect()
    }
}
