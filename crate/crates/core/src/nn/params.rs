use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Grads, Graph, Var};
use super::tensor::Tensor;

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
}

/// Graph handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(Arc::new(value));
        self.values.len() - 1
    }

    /// Conv weight `[co, ci, k, k]` drawn from N(0, 0.02²) and zero bias.
    pub fn add_conv<R: Rng>(
        &mut self,
        prefix: &str,
        ci: usize,
        co: usize,
        k: usize,
        rng: &mut R,
    ) -> (usize, usize) {
        let w = normal_tensor([co, ci, k, k], 0.0, 0.02, rng);
        let wi = self.add(format!("{prefix}.weight"), w);
        let bi = self.add(format!("{prefix}.bias"), Tensor::zeros([co, 1, 1, 1]));
        (wi, bi)
    }

    /// Transposed-conv weight `[ci, co, 2, 2]` and zero bias.
    pub fn add_conv_transpose<R: Rng>(
        &mut self,
        prefix: &str,
        ci: usize,
        co: usize,
        rng: &mut R,
    ) -> (usize, usize) {
        let w = normal_tensor([ci, co, 2, 2], 0.0, 0.02, rng);
        let wi = self.add(format!("{prefix}.weight"), w);
        let bi = self.add(format!("{prefix}.bias"), Tensor::zeros([co, 1, 1, 1]));
        (wi, bi)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.values[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.values[idx])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().map(|v| &**v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| g.leaf(Arc::clone(v))).collect(),
        }
    }

    /// Parameter gradients in store order; unreached parameters get zeros.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Grads) -> Vec<Tensor> {
        bound
            .vars
            .iter()
            .zip(&self.values)
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }
}

pub(crate) fn normal_tensor<R: Rng>(shape: [usize; 4], mean: f32, std: f32, rng: &mut R) -> Tensor {
    let dist = Normal::new(mean, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("size")
}
