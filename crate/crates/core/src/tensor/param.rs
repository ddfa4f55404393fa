use std::collections::HashMap;

use super::{numel, Shape, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Shape,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Named parameters of one model, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Shape, value: Vec<f64>) -> Result<ParamId> {
        let name = name.into();
        if value.len() != numel(shape) {
            return Err(Error::shape(format!(
                "parameter `{name}`: shape {shape:?} needs {} values, got {}",
                numel(shape),
                value.len()
            )));
        }
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter { name, shape, grad: vec![0.0; value.len()], value });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
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

    /// Number of parameter tensors.
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[f64]) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.len() != grad.len() {
            return Err(Error::shape(format!(
                "gradient for `{}` has {} values, parameter has {}",
                p.name,
                grad.len(),
                p.grad.len()
            )));
        }
        p.grad.iter_mut().zip(grad).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Forward-pass context: the tape that records the pass and the parameters it reads.
pub struct Ctx<'a> {
    tape: Tape,
    params: &'a ParamStore,
}

impl<'a> Ctx<'a> {
    /// Recording context; parameters become tape leaves.
    pub fn new(params: &'a ParamStore) -> Self {
        Ctx { tape: Tape::new(), params }
    }

    /// Inference context; nothing is recorded.
    pub fn no_grad(params: &'a ParamStore) -> Self {
        Ctx { tape: Tape::no_grad(), params }
    }

    pub fn p(&self, id: ParamId) -> Tensor {
        self.tape.param(self.params, id)
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }
}
