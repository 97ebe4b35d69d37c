use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{AmnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<F> {
    pub name: String,
    pub value: Tensor<F>,
    /// Frozen parameters enter the tape as constants and never move.
    pub frozen: bool,
}

/// Named, ordered collection of model parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, frozen: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            value,
            frozen,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<F>] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    /// Replaces the value of `name`, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| AmnError::InvalidArgument(format!("no parameter named {name}")))?;
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(AmnError::shape(
                "set_param",
                entry.value.shape(),
                value.shape(),
            ));
        }
        entry.value = value;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    frozen: e.frozen,
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }
}

/// Gradient for every parameter of a store, indexed like the store.
#[derive(Clone, Debug)]
pub struct ParamGrads<F> {
    pub grads: Vec<Tensor<F>>,
}

impl<F: Real> ParamGrads<F> {
    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.grads[id.0]
    }

    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        ParamGrads {
            grads: store
                .entries
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect(),
        }
    }
}

/// A tape bound to a parameter store. Parameters are placed on the tape
/// lazily the first time they are used.
pub struct Graph<'a, F> {
    pub tape: Tape<F>,
    store: &'a ParamStore<F>,
    bound: Vec<Option<Var>>,
}

impl<'a, F: Real> Graph<'a, F> {
    pub fn new(store: &'a ParamStore<F>) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParamStore<F> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let entry = &self.store.entries[id.0];
        let v = self.tape.leaf(entry.value.clone(), !entry.frozen);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        self.tape.value(v)
    }

    /// Backward from `loss`, gathered per parameter. Parameters that were
    /// never bound, or are frozen, receive zeros.
    pub fn param_grads(&self, loss: Var) -> Result<ParamGrads<F>> {
        let g = self.tape.backward(loss)?;
        let grads = self
            .store
            .entries
            .iter()
            .zip(&self.bound)
            .map(|(e, b)| match b {
                Some(v) if !e.frozen => g.wrt(*v),
                _ => Tensor::zeros(e.value.shape()),
            })
            .collect();
        Ok(ParamGrads { grads })
    }
}
