//! Named parameter collections and their binding onto a tape.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered map from parameter name to tensor. Iteration order is the sorted
/// name order, which fixes every reduction and serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
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

    /// Entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Entries whose name passes `keep`.
    pub fn select(&self, keep: impl Fn(&str) -> bool) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Overwrites or adds every entry of `other`.
    pub fn extend_from(&mut self, other: &ParamSet) {
        for (k, v) in &other.tensors {
            self.tensors.insert(k.clone(), v.clone());
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::clear_grad);
    }

    /// Raw little-endian bytes of the values of every entry matching
    /// `filter`, prefixed by name and shape. Used for freeze/identity checks.
    pub fn fingerprint_bytes(&self, filter: impl Fn(&str) -> bool) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, t) in self.tensors.iter().filter(|(k, _)| filter(k)) {
            out.extend_from_slice(name.as_bytes());
            out.push(0);
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Binds every entry as a tracked tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        self.bind_where(tape, |_| true)
    }

    /// Binds every entry as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Binding {
        self.bind_where(tape, |_| false)
    }

    /// Binds entries for which `trainable` holds as tracked leaves, the rest
    /// as constants.
    pub fn bind_where(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Binding {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable(k) {
                    tape.param(t)
                } else {
                    tape.constant(t)
                };
                (k.clone(), v)
            })
            .collect();
        Binding { vars }
    }

    /// Adds the adjoints of tracked bound entries into each tensor's grad
    /// buffer, scaled by `weight`. Untracked or unreachable entries get zeros
    /// added, so every bound entry ends with an allocated grad buffer.
    pub fn accumulate(
        &mut self,
        tape: &Tape,
        binding: &Binding,
        grads: &Gradients,
        weight: f64,
    ) -> Result<()> {
        for (name, &var) in &binding.vars {
            let t = self.get_mut(name)?;
            let buf = t.grad_mut();
            if !tape.is_tracked(var) {
                continue;
            }
            if let Some(g) = grads.get(var) {
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += weight * x;
                }
            }
        }
        Ok(())
    }

    /// Inserts a uniform(-range, range) initialized tensor.
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], range: f64, rng: &mut impl Rng) {
        let mut t = Tensor::zeros(shape);
        if range > 0.0 {
            for v in t.data_mut() {
                *v = rng.random_range(-range..=range);
            }
        }
        self.insert(name, t);
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn init_ones(&mut self, name: &str, shape: &[usize]) {
        let n = shape.iter().product();
        self.insert(name, Tensor::new(shape.to_vec(), vec![1.0; n]).expect("valid shape"));
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

/// Name → tape variable map produced by [`ParamSet::bind`].
#[derive(Clone, Debug, Default)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Adds the entries of `other`; a name bound in both is an error.
    pub fn extend(&mut self, other: Binding) -> Result<()> {
        for (k, v) in other.vars {
            if self.vars.insert(k.clone(), v).is_some() {
                return Err(Error::Contract(format!("parameter {k} bound twice")));
            }
        }
        Ok(())
    }

    /// Gradient map for the tracked entries of this binding.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .filter(|(_, &v)| tape.is_tracked(v))
            .map(|(k, &v)| (k.clone(), grads.get_or_zeros(v, tape.value(v).len())))
            .collect()
    }
}
