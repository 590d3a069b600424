use std::collections::BTreeMap;

use ndarray::{s, Array3, Axis};

use super::calf::{CalfConfig, CalfModel};
use super::{check_inputs, Forecaster};
use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};

/// One CALF model per cluster; each predicts only its member series.
#[derive(Debug, Clone)]
pub struct ClusterCalfModel {
    pub assignment: ClusterAssignment,
    pub models: BTreeMap<usize, CalfModel>,
    input_length: usize,
    horizon: usize,
}

impl ClusterCalfModel {
    /// Fresh models; cluster `c` is seeded with `seed + min(members(c))`, so
    /// relabelling clusters does not change any model.
    pub fn new(assignment: ClusterAssignment, base: &CalfConfig, seed: u64) -> Result<Self> {
        let mut models = BTreeMap::new();
        for c in 0..assignment.k {
            let members = assignment.members(c);
            let cfg = CalfConfig {
                n_series: members.len(),
                ..base.clone()
            };
            models.insert(c, CalfModel::new(cfg, Self::cluster_seed(seed, &members))?);
        }
        Self::from_parts(assignment, models)
    }

    pub fn cluster_seed(seed: u64, members: &[usize]) -> u64 {
        seed.wrapping_add(members.iter().copied().min().unwrap_or(0) as u64)
    }

    pub fn from_parts(assignment: ClusterAssignment, models: BTreeMap<usize, CalfModel>) -> Result<Self> {
        let mut shape = None;
        for c in 0..assignment.k {
            let m = models
                .get(&c)
                .ok_or_else(|| Error::Config(format!("no CALF model for cluster {c}")))?;
            let size = assignment.members(c).len();
            if m.n_series() != size {
                return Err(Error::Config(format!(
                    "cluster {c} has {size} series but its model expects {}",
                    m.n_series()
                )));
            }
            let dims = (m.input_length(), m.horizon());
            if *shape.get_or_insert(dims) != dims {
                return Err(Error::Config(format!("cluster {c} model has (L, H) = {dims:?}, others {shape:?}")));
            }
        }
        if let Some(extra) = models.keys().find(|&&c| c >= assignment.k) {
            return Err(Error::Config(format!("model supplied for unknown cluster {extra}")));
        }
        let (input_length, horizon) = shape.expect("k >= 1");
        Ok(Self {
            assignment,
            models,
            input_length,
            horizon,
        })
    }

    pub fn input_length(&self) -> usize {
        self.input_length
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_series(&self) -> usize {
        self.assignment.n()
    }

    /// S×H×N predictions, each series written exactly once by its cluster's model.
    pub fn predict(&self, inputs: &Array3<f64>) -> Result<Array3<f64>> {
        check_inputs(inputs, self.input_length, self.n_series())?;
        let mut out = Array3::zeros((inputs.dim().0, self.horizon, self.n_series()));
        for (&c, model) in &self.models {
            let members = self.assignment.members(c);
            let sub = inputs.select(Axis(2), &members);
            let pred = model.predict(&sub)?;
            for (j, &n) in members.iter().enumerate() {
                out.slice_mut(s![.., .., n]).assign(&pred.slice(s![.., .., j]));
            }
        }
        Ok(out)
    }
}
