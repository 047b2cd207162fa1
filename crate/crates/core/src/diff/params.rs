use std::ops::Index;

use super::{Gradients, Scalar, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors. Models keep [`ParamId`]s; values live here.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<Binding> {
        let vars = self
            .values
            .iter()
            .map(|v| tape.param(v.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Binding { vars })
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Tape variables for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Binding over variables already on a tape, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    /// Gradients aligned with the store's parameters (zeros where unreachable).
    pub fn collect<T: Scalar>(&self, tape: &Tape<T>, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| grads.get(tape, v)).collect()
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Binding {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}
