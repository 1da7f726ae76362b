use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Buffers (batch-norm running statistics) are stored but not optimised.
    pub trainable: bool,
}

/// Named, ordered collection of model parameters and buffers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|id| self.entry(*id).trainable).collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Rounds every value to `f32` precision, the storage precision of checkpoints.
    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            for v in &mut e.value.data {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Copies values for every parameter whose name starts with `prefix`
    /// from `other`. Returns how many were copied.
    pub fn copy_prefix_from(&mut self, other: &ParamStore, prefix: &str) -> usize {
        let mut n = 0;
        for e in &mut self.entries {
            if !e.name.starts_with(prefix) {
                continue;
            }
            if let Some(id) = other.find(&e.name) {
                let src = other.value(id);
                if src.shape() == e.value.shape() {
                    e.value = src.clone();
                    n += 1;
                }
            }
        }
        n
    }
}

/// Glorot-uniform initialisation for a `[fan_out, fan_in]` weight.
pub fn glorot(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-a..a)).collect())
}

/// He-normal initialisation.
pub fn he_normal(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Tensor {
    let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| d.sample(rng)).collect())
}

pub fn small_normal(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Tensor {
    let d = Normal::new(0.0, std).expect("valid std");
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| d.sample(rng)).collect())
}
