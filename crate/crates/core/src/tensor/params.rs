use std::collections::HashMap;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    /// Weight matrices take part in the L2 penalty; biases do not.
    decay: bool,
}

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "parameter {name} registered twice"
        );
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, value, decay });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.entries[id.0].decay
    }

    /// Replaces the value of `name`, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::Unknown {
            kind: "parameter",
            name: name.to_string(),
        })?;
        let slot = self.get_mut(id);
        if slot.shape() != value.shape() {
            return Err(Error::shape("set parameter", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    pub fn total_size(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }
}

/// Lazily places parameters on a tape the first time a forward pass asks
/// for them.
#[derive(Debug)]
pub struct Binder {
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl Binder {
    pub fn new(store: &ParamStore, trainable: bool) -> Self {
        Binder {
            vars: vec![None; store.len()],
            trainable,
        }
    }

    pub fn var(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Var {
        *self.vars[id.0].get_or_insert_with(|| tape.leaf(store.get(id).clone(), self.trainable))
    }

    pub fn bound(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }

    /// Bound weight matrices, the ones an L2 penalty applies to.
    pub fn decayed(&self, store: &ParamStore) -> Vec<Var> {
        self.bound()
            .filter(|(id, _)| store.decays(*id))
            .map(|(_, v)| v)
            .collect()
    }

    /// One gradient per stored parameter; zeros for parameters that never
    /// reached the tape.
    pub fn gradients(&self, tape: &Tape, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| match self.vars[id.0] {
                Some(v) => tape.grad(v),
                None => Tensor::zeros(store.get(id).shape()),
            })
            .collect()
    }
}

/// A tape plus the parameter bindings of one forward/backward pass.
#[derive(Debug)]
pub struct Session<'a> {
    pub tape: Tape,
    pub binder: Binder,
    store: &'a ParamStore,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Session {
            tape: Tape::new(),
            binder: Binder::new(store, trainable),
            store,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.binder.var(&mut self.tape, self.store, id)
    }

    /// Current tape length, for [`Session::rewind`].
    pub fn mark(&self) -> usize {
        self.tape.len()
    }

    /// Rolls the tape back to `mark`, unbinding parameters bound after it.
    pub fn rewind(&mut self, mark: usize) {
        self.tape.rewind(mark);
        for v in &mut self.binder.vars {
            if v.is_some_and(|v| v.index() >= mark) {
                *v = None;
            }
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn gradients(&self) -> Vec<Tensor> {
        self.binder.gradients(&self.tape, self.store)
    }

    pub fn decayed(&self) -> Vec<Var> {
        self.binder.decayed(self.store)
    }
}
