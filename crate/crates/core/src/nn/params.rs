use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{BatchStats, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Trainable weights receive gradients and optimizer updates; buffers
/// (batch-norm running statistics) are state that only the forward pass
/// updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

/// Ordered registry of named tensors. Registration order is the checkpoint
/// order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        kind: ParamKind,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(
                "register",
                format!("duplicate parameter name {name}"),
            ));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, value, kind });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn weight_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn weight_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids()
            .filter(|&id| self.entries[id.0].kind == ParamKind::Weight)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    kind: e.kind,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>], momentum: T) {
        for u in updates {
            for (id, batch) in [(u.mean, &u.stats.mean), (u.var, &u.stats.var)] {
                for (r, &b) in self.get_mut(id).data_mut().iter_mut().zip(batch) {
                    *r = momentum * *r + (T::one() - momentum) * b;
                }
            }
        }
    }
}

/// Running-statistics update produced by a train-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A forward pass in progress: the graph, the parameter values bound into it
/// and the batch-norm statistics collected so far.
pub struct Session<'a, T> {
    pub graph: &'a mut Graph<T>,
    store: &'a ParamStore<T>,
    vars: Vec<Var>,
    mode: Mode,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Scalar> Session<'a, T> {
    /// Binds every store entry as a graph leaf. Weights receive gradients
    /// only when `trainable`.
    pub fn bind(
        graph: &'a mut Graph<T>,
        store: &'a ParamStore<T>,
        mode: Mode,
        trainable: bool,
    ) -> Self {
        let vars = store
            .entries()
            .iter()
            .map(|e| {
                if trainable && e.kind == ParamKind::Weight {
                    graph.leaf(e.value.clone())
                } else {
                    graph.constant(e.value.clone())
                }
            })
            .collect();
        Session {
            graph,
            store,
            vars,
            mode,
            bn_updates: Vec::new(),
        }
    }

    /// Uses caller-created leaves (one per store entry, in order).
    pub fn from_vars(
        graph: &'a mut Graph<T>,
        store: &'a ParamStore<T>,
        vars: Vec<Var>,
        mode: Mode,
    ) -> Result<Self> {
        if vars.len() != store.len() {
            return Err(Error::dim(
                "session",
                format!("{} vars for {} parameters", vars.len(), store.len()),
            ));
        }
        Ok(Session {
            graph,
            store,
            vars,
            mode,
            bn_updates: Vec::new(),
        })
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub(crate) fn record_bn(&mut self, update: BnUpdate<T>) {
        self.bn_updates.push(update);
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Gradient of every trainable entry, zero-filled where no path reached.
    pub fn weight_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.store
            .weight_ids()
            .map(|id| {
                let g = self
                    .graph
                    .grad(self.vars[id.0])
                    .unwrap_or_else(|| Tensor::zeros(self.store.get(id).shape().to_vec()));
                (id, g)
            })
            .collect()
    }
}

/// He-uniform initialization: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn he_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.gen_range(-bound..bound)))
}
