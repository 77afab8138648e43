use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named trainable tensors. Iteration order is the lexical order of names,
/// which keeps optimizer updates and checkpoints deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

/// Gradients keyed by parameter name.
pub type ParamGrads = BTreeMap<String, Tensor>;

/// A parameter set placed on a tape for one forward pass.
pub struct Bound<'t> {
    tape: &'t Tape,
    vars: BTreeMap<String, Var<'t>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    /// `N(0, 1/fan_in)` weights for a `[fan_in, fan_out]` matrix.
    pub fn init_weight<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
        let std = (1.0 / fan_in as f64).sqrt();
        self.insert(name, Tensor::randn(vec![fan_in, fan_out], std, rng));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Frozen parameters are bound as constants and never updated.
    pub fn freeze(&mut self, name: &str) {
        self.frozen.insert(name.to_string());
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen_names(&self) -> impl Iterator<Item = &String> {
        self.frozen.iter()
    }

    /// Moves every entry of `other` into `self` under `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: ParamSet) {
        for (k, v) in other.tensors {
            self.tensors.insert(format!("{prefix}{k}"), v);
        }
        for k in other.frozen {
            self.frozen.insert(format!("{prefix}{k}"));
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if self.frozen.contains(k) {
                    tape.constant(v.clone())
                } else {
                    tape.param(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { tape, vars }
    }
}

impl<'t> Bound<'t> {
    /// Binds already-created variables by name, e.g. the inputs handed out by
    /// [`gradient_check`](super::gradient_check).
    pub fn from_vars(tape: &'t Tape, vars: impl IntoIterator<Item = (String, Var<'t>)>) -> Self {
        Self {
            tape,
            vars: vars.into_iter().collect(),
        }
    }

    pub fn tape(&self) -> Result<&'t Tape> {
        Ok(self.tape)
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    /// Pulls the gradient of every trainable parameter out of a sweep.
    pub fn grads(&self, grads: &Gradients) -> ParamGrads {
        self.vars
            .iter()
            .filter_map(|(k, v)| grads.get(*v).map(|g| (k.clone(), g.clone())))
            .collect()
    }
}
