//! Named parameter arrays and their per-graph bindings.

use hpinn_autodiff::{Gradients, Graph, Tensor, Value};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Buffers (running statistics) are stored alongside weights but never
    /// receive gradients.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, false)
    }

    /// Uniform Glorot initialization.
    pub fn add_xavier(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let t = Tensor::from_fn(rows, cols, |_, _| rng.random_range(-a..a));
        self.add(name, t)
    }

    /// Affine weight `fan_in x fan_out` with Glorot init.
    pub fn add_linear_weight(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> ParamId {
        self.add_xavier(name, fan_in, fan_out, fan_in, fan_out, rng)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Register weights as graph parameters and buffers as constants.
    pub fn bind<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        let values = self
            .entries
            .iter()
            .map(|e| if e.trainable { graph.parameter(e.value.clone()) } else { graph.constant(e.value.clone()) })
            .collect();
        Bound { values }
    }
}

/// A [`ParamStore`] registered on one graph.
pub struct Bound<'g> {
    values: Vec<Value<'g>>,
}

impl<'g> Bound<'g> {
    pub fn get(&self, id: ParamId) -> Value<'g> {
        self.values[id.0]
    }

    /// Gradient per store entry; `None` for buffers.
    pub fn collect_gradients(&self, grads: &Gradients) -> Vec<Option<Tensor>> {
        self.values.iter().map(|v| grads.get(v).cloned()).collect()
    }
}
