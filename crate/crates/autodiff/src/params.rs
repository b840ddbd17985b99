//! Named parameter storage.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::Matrix;

/// Ordered map from parameter name to value. Iteration order is the sorted
/// name order, which keeps optimisers and serialisation deterministic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    arrays: BTreeMap<String, Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Option<Matrix> {
        self.arrays.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.arrays.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Matrix> {
        self.arrays.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.arrays.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.values().all(|a| a.iter().all(|x| x.is_finite()))
    }

    /// Moves every array of `other` into `self` under `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: ParamStore) {
        for (k, v) in other.arrays {
            self.arrays.insert(format!("{prefix}{k}"), v);
        }
    }

    /// Arrays whose name starts with `prefix`, with the prefix removed.
    pub fn extract(&self, prefix: &str) -> ParamStore {
        let arrays = self
            .arrays
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|rest| (rest.to_string(), v.clone())))
            .collect();
        ParamStore { arrays }
    }
}

/// Gradient accumulator keyed like a [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct GradStore {
    grads: BTreeMap<String, Matrix>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, name: &str, g: &Matrix) {
        match self.grads.get_mut(name) {
            Some(existing) => *existing += g,
            None => {
                self.grads.insert(name.to_string(), g.clone());
            }
        }
    }

    pub fn extend(&mut self, grads: impl IntoIterator<Item = (String, Matrix)>) {
        for (name, g) in grads {
            self.accumulate(&name, &g);
        }
    }

    pub fn merge(&mut self, other: &GradStore) {
        for (name, g) in &other.grads {
            self.accumulate(name, g);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.grads.iter()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(|a| a.iter().all(|x| x.is_finite()))
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn zeros_like(store: &ParamStore) -> Self {
        let grads = store
            .iter()
            .map(|(k, v)| (k.clone(), Array2::zeros(v.raw_dim())))
            .collect();
        GradStore { grads }
    }
}
