use std::collections::HashMap;

use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors plus their Adagrad accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    accumulators: Vec<Vec<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            names: Vec::new(),
            tensors: Vec::new(),
            accumulators: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.tensors.len());
        self.accumulators.push(vec![T::zero(); tensor.len()]);
        self.tensors.push(tensor);
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn accumulator(&self, id: ParamId) -> &[T] {
        &self.accumulators[id.0]
    }

    pub fn set_accumulator(&mut self, id: ParamId, values: Vec<T>) -> Result<()> {
        if values.len() != self.tensors[id.0].len() {
            return Err(Error::contract(format!(
                "accumulator for {} needs {} values, got {}",
                self.names[id.0],
                self.tensors[id.0].len(),
                values.len()
            )));
        }
        self.accumulators[id.0] = values;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub(crate) fn ensure_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad_mut();
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    pub fn has_grads(&self) -> bool {
        self.tensors.iter().all(|t| t.grad().is_some())
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(Tensor::grad)
            .flat_map(|g| g.iter().map(|v| v.f64() * v.f64()))
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let k = T::of(max_norm / norm);
            for t in &mut self.tensors {
                if let (_, Some(g)) = t.data_and_grad() {
                    g.iter_mut().for_each(|v| *v = *v * k);
                }
            }
        }
        norm
    }

    /// Multiply every gradient by `k` (e.g. to average over a batch).
    pub fn scale_grads(&mut self, k: f64) {
        let k = T::of(k);
        for t in &mut self.tensors {
            if let (_, Some(g)) = t.data_and_grad() {
                g.iter_mut().for_each(|v| *v = *v * k);
            }
        }
    }

    /// `acc += g²; w -= lr · g / (√acc + ε)`, then clears the gradients.
    pub fn adagrad_step(&mut self, learning_rate: f64, epsilon: f64) -> Result<()> {
        if !self.has_grads() {
            return Err(Error::contract("adagrad_step called without populated gradients"));
        }
        let (lr, eps) = (T::of(learning_rate), T::of(epsilon));
        for (t, acc) in self.tensors.iter_mut().zip(&mut self.accumulators) {
            let g = t.take_grad().expect("checked above");
            for ((w, a), gi) in t.data_mut().iter_mut().zip(acc.iter_mut()).zip(&g) {
                *a = *a + *gi * *gi;
                *w = *w - lr * *gi / (a.sqrt() + eps);
            }
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("parameters after adagrad step".into()));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            accumulators: self
                .accumulators
                .iter()
                .map(|a| a.iter().map(|v| U::of(v.f64())).collect())
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Uniform in `[-r, r]`, `r = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng>(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-r..=r))).collect();
    Tensor::new(shape, data).expect("length matches shape")
}
