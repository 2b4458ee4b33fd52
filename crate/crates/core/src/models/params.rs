//! Named parameter storage and the Adam optimizer.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ModelError, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.05;

/// Parameters in registration order; names are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers `name` with entries uniform in `[−INIT_SCALE, INIT_SCALE]`.
    pub fn register(&mut self, name: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Result<()> {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE)).collect();
        self.insert(name, Tensor::new(dims, data)?)
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(ModelError::Contract(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(())
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

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.position(name)
            .map(|i| &self.values[i])
            .ok_or_else(|| ModelError::Contract(format!("unknown parameter {name}")))
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self.position(name).ok_or_else(|| ModelError::Contract(format!("unknown parameter {name}")))?;
        if value.dims() != self.values[i].dims() {
            return Err(ModelError::Contract(format!(
                "parameter {name} has shape {}, got {}",
                self.values[i].shape(),
                value.shape()
            )));
        }
        self.values[i] = value;
        Ok(())
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Leaves (or constants) for every parameter, in order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.values.iter().map(|v| if trainable { tape.leaf(v.clone()) } else { tape.constant(v.clone()) }).collect()
    }
}

/// Parameters bound to a tape, looked up by name under an optional prefix.
#[derive(Clone, Copy)]
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: &'a [Var],
    prefix: &'a str,
}

impl<'a> Bound<'a> {
    pub fn new(store: &'a ParamStore, vars: &'a [Var]) -> Self {
        Bound { store, vars, prefix: "" }
    }

    pub fn with_prefix(self, prefix: &'a str) -> Self {
        Bound { prefix, ..self }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        let full = format!("{}{name}", self.prefix);
        self.store
            .position(&full)
            .map(|i| self.vars[i])
            .ok_or_else(|| ModelError::Contract(format!("unknown parameter {full}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.values().iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam { cfg, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected update; `grads` align with the store order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(ModelError::Contract(format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (p, ((value, g), (m, v))) in
            store.values_mut().iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())).enumerate()
        {
            if g.numel() != value.numel() {
                return Err(ModelError::Contract(format!("gradient {p} has {} entries, expected {}", g.numel(), value.numel())));
            }
            let mut data = value.data().to_vec();
            for i in 0..data.len() {
                let gi = g.data()[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
            }
            *value = Tensor::from_shape(value.shape().clone(), data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn init_is_seeded_and_bounded() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        a.register("w", &[3, 4], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        b.register("w", &[3, 4], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.get("w").unwrap().data().iter().all(|v| v.abs() <= INIT_SCALE));
        assert!(a.register("w", &[1], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::vector(vec![3.0, -2.0])).unwrap();
        let mut opt = Adam::new(AdamConfig::with_learning_rate(0.1), &store);
        for _ in 0..500 {
            let g = store.get("x").unwrap().map(|v| 2.0 * v);
            opt.step(&mut store, &[g]).unwrap();
        }
        assert!(store.get("x").unwrap().data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::vector(vec![0.3, -0.7])).unwrap();
        let before = store.clone();
        let mut opt = Adam::new(AdamConfig::with_learning_rate(0.0), &store);
        opt.step(&mut store, &[Tensor::vector(vec![1.0, -5.0])]).unwrap();
        assert_eq!(store, before);
    }
}
