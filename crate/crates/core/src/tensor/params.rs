use super::{Gradients, Real, Tape, Tensor, Var};
use crate::error::{shape_err, Result};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named learnable tensors in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces the value of a named parameter, keeping its shape.
    pub fn assign(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| shape_err!("no parameter named {name}"))?;
        if self.tensors[id.0].shape() != tensor.shape() {
            return Err(shape_err!(
                "parameter {name} has shape {:?}, got {:?}",
                self.tensors[id.0].shape(),
                tensor.shape()
            ));
        }
        self.tensors[id.0] = tensor;
        Ok(())
    }

    /// Records every parameter as a leaf of `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| tape.leaf(t.clone(), requires_grad))
                .collect(),
        }
    }
}

/// Tape handles of a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles already on a tape, one per parameter in push order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients in parameter order; parameters the loss never reached get
    /// zeros.
    pub fn collect<T: Real>(&self, grads: &mut Gradients<T>, params: &ParamSet<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(params.tensors())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }
}
