//! Named parameter registry shared by every branch of the model.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Gradients, NormStatUpdate};
use crate::scalar::{s, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Learnable in principle but held fixed by configuration.
    Frozen,
    /// Non-gradient state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamTensor<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub kind: ParamKind,
}

impl<T: Scalar> ParamTensor<T> {
    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<ParamTensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), index: BTreeMap::new() }
    }

    /// Register a tensor under a unique hierarchical name.
    pub fn register(&mut self, name: &str, value: Tensor<T>, kind: ParamKind) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter name {name}");
        let grad = Tensor::zeros(value.shape());
        self.params.push(ParamTensor { name: name.to_string(), value, grad, kind });
        self.index.insert(name.to_string(), self.params.len() - 1);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_kind(&mut self, id: ParamId, kind: ParamKind) {
        self.params[id.0].kind = kind;
    }

    /// Number of scalar entries in trainable and frozen tensors.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind != ParamKind::Buffer).map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in &grads.by_param {
            let p = &mut self.params[id.0];
            p.grad.data_mut().iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
    }

    /// Exponential moving average of batch-norm statistics.
    pub fn apply_stat_updates(&mut self, updates: &[NormStatUpdate<T>], momentum: T) {
        for u in updates {
            for (id, batch) in [(u.mean_id, &u.batch_mean), (u.var_id, &u.batch_var)] {
                let p = &mut self.params[id.0];
                p.value
                    .data_mut()
                    .iter_mut()
                    .zip(batch)
                    .for_each(|(r, &b)| *r = (T::one() - momentum) * *r + momentum * b);
            }
        }
    }

    /// Replace values from another store with an identical name/shape table.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::Shape("parameter tables differ in length".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Shape(format!("parameter {} does not match {}", a.name, b.name)));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }
}

/// Kaiming-uniform tensor with bound `sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| s::<T>(rng.random_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).unwrap()
}
