use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter matrices; frozen ones are never touched by optimizers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub trainable: bool,
    pub value: Array2<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            trainable,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Glorot-uniform initialised matrix.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        trainable: bool,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit));
        self.add(name, value, trainable)
    }

    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        trainable: bool,
        rng: &mut R,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let value = Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng));
        self.add(name, value, trainable)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize, trainable: bool) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)), trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.is_trainable(id)).collect()
    }

    pub fn n_scalars(&self, trainable_only: bool) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable || !trainable_only)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn shapes(&self) -> BTreeMap<String, (usize, usize)> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.dim())).collect()
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        let layout = |s: &ParamStore| -> Vec<(String, (usize, usize))> {
            s.entries.iter().map(|e| (e.name.clone(), e.value.dim())).collect()
        };
        if layout(self) != layout(other) {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            mine.value.assign(&theirs.value);
        }
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }
}
