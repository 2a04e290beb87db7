use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Ordered set of named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// He-uniform kernel: `U(-b, b)` with `b = sqrt(6 / fan_in)`, where
    /// `fan_in` is the product of all but the leading extent.
    pub fn add_he_uniform<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], rng: &mut R) -> ParamId {
        let fan_in: usize = shape[1..].iter().product();
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches data"))
    }

    pub fn add_full(&mut self, name: impl Into<String>, shape: &[usize], value: f32) -> ParamId {
        self.add(name, Tensor::full(shape, value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn param(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn find(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter as a trainable leaf of `graph`. The returned
    /// handles are indexed like the store.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| graph.param(p.value.clone(), p.name.clone()))
            .collect()
    }

    /// Registers every parameter as a constant leaf (inference).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| graph.input(p.value.clone())).collect()
    }

    /// Copies gradients of the bound leaves out of `graph`.
    pub fn collect_grads(&self, graph: &Graph, vars: &[Var]) -> Vec<Vec<f32>> {
        vars.iter()
            .zip(&self.params)
            .map(|(v, p)| {
                graph
                    .grad(*v)
                    .map(<[f32]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; p.value.len()])
            })
            .collect()
    }

    /// Replaces values, keeping names and shapes.
    pub fn assign(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(TensorError::Config(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "assign",
                    lhs: p.value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }
}
