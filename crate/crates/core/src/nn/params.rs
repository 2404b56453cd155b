use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable matrices.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics if the name is already taken.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter `{name}`");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Copies every parameter of `other` whose name starts with `prefix`,
    /// renaming it by replacing that prefix with `into`. Shapes must match.
    pub fn copy_prefixed(&mut self, other: &ParamStore, prefix: &str, into: &str) -> usize {
        let mut copied = 0;
        for (name, value) in other.iter() {
            if let Some(rest) = name.strip_prefix(prefix) {
                let target = format!("{into}{rest}");
                if let Some(id) = self.id(&target) {
                    if self.get(id).dim() == value.dim() {
                        *self.get_mut(id) = value.clone();
                        copied += 1;
                    }
                }
            }
        }
        copied
    }
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients {
    values: Vec<Mat>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            values: store.values.iter().map(|v| Mat::zeros(v.dim())).collect(),
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Mat) {
        self.values[id.0] += g;
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|m| m.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    first: HashMap<usize, Mat>,
    second: HashMap<usize, Mat>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (i, g) in grads.values.iter().enumerate() {
            let m = self.first.entry(i).or_insert_with(|| Mat::zeros(g.dim()));
            let v = self.second.entry(i).or_insert_with(|| Mat::zeros(g.dim()));
            let (b1, b2) = (self.beta1, self.beta2);
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            if self.learning_rate == 0.0 {
                continue;
            }
            let lr = self.learning_rate;
            let eps = self.eps;
            let p = &mut store.values[i];
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
        }
    }
}

/// Glorot-uniform initialisation.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

pub fn normal_init<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Mat {
    let dist = Normal::new(0.0, std).expect("finite standard deviation");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}
