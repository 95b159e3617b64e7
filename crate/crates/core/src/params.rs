//! Named, ordered collections of real parameter tensors.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{RealTensor, Tape, Value, Var};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<RealTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: RealTensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[RealTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [RealTensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RealTensor)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&RealTensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut RealTensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    /// Places every tensor on `tape`, as trainable leaves or constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let index = self.names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Bound { vars, index }
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::ConfigInvalid("parameter names differ".into()));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::shape("parameters", a.shape(), b.shape()));
            }
        }
        Ok(())
    }
}

/// Parameters bound to one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
    index: HashMap<String, usize>,
}

impl<'t> Bound<'t> {
    /// Binds existing tape variables under the given names (same order).
    pub fn from_vars(vars: Vec<Var<'t>>, names: &[String]) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { vars, index }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::ConfigInvalid(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Gradients in store order (zeros for leaves that received none).
    pub fn grads(&self) -> Vec<RealTensor> {
        self.vars
            .iter()
            .map(|v| match v.grad() {
                Some(Value::Real(t)) => t,
                Some(Value::Complex(c)) => c.re().clone(),
                None => RealTensor::zeros(&v.shape()),
            })
            .collect()
    }
}

/// He-uniform draw: `U(-b, b)` with `b = sqrt(6 / fan_in)`, variance `2 / fan_in`.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> RealTensor {
    let b = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-b..b)).collect();
    RealTensor::new(shape.to_vec(), data).expect("shape matches length")
}
