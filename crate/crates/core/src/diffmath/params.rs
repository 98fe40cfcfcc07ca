use indexmap::IndexMap;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Anything that owns named trainable tensors.
///
/// Visit order must be stable: optimizers and checkpoints rely on it.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }

    /// Snapshot of every parameter, keyed by name.
    fn param_map(&self) -> IndexMap<String, Tensor> {
        let mut out = IndexMap::new();
        self.visit_params(&mut |name, t| {
            out.insert(name.to_string(), t.clone());
        });
        out
    }
}

/// A free-standing ordered set of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet(pub IndexMap<String, Tensor>);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, t: Tensor) -> Self {
        self.0.insert(name.to_string(), t);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    /// Registers every tensor as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Result<IndexMap<String, Var>> {
        self.0
            .iter()
            .map(|(name, t)| Ok((name.clone(), g.param(name, t)?)))
            .collect()
    }
}

impl Parameterized for ParamSet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (name, t) in &self.0 {
            f(name, t);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (name, t) in self.0.iter_mut() {
            f(name, t);
        }
    }
}
