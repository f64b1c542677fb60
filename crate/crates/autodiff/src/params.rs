use indexmap::IndexMap;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Named, ordered collection of trainable tensors.
///
/// Insertion order is preserved so checkpoints and optimiser state line up
/// across save and load.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Records every tensor on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Records every tensor as a constant; no gradients will flow.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
            .collect();
        BoundParams { vars }
    }

    /// `self ← (1 − rate)·self + rate·source`, matched by name.
    ///
    /// # Panics
    /// If the two sets do not hold the same names and shapes.
    pub fn soft_update_from(&mut self, source: &ParamSet, rate: f64) {
        for (name, dst) in self.tensors.iter_mut() {
            let src = source.get(name).unwrap_or_else(|| panic!("missing parameter `{name}`"));
            assert_eq!(dst.shape(), src.shape(), "shape mismatch for `{name}`");
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = (1.0 - rate) * *d + rate * s;
            }
        }
    }

    /// Same names, same shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        ParamSet { tensors }
    }
}

/// Tape handles for a [`ParamSet`] bound to one forward pass.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// # Panics
    /// If `name` was not in the bound set. Missing names are programmer errors.
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
