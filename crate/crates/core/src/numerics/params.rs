use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Parameters of a store registered as leaves on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
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

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Same as [`bind`](Self::bind) but as constants (inference).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    /// Gradients of the last backward pass, one slot per parameter.
    pub fn collect_grads(&self, tape: &mut Tape, bound: &Bound) -> Vec<Option<Tensor>> {
        bound.vars.iter().map(|&v| tape.take_grad(v)).collect()
    }

    /// Overwrites values from another store with identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let j = other
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let src = other.get(j);
            if src.shape() != self.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    self.tensors[i].shape(),
                    src.shape()
                )));
            }
            self.tensors[i] = src.clone();
        }
        Ok(())
    }
}
