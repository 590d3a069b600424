use serde::{Deserialize, Serialize};

use crate::autograd::OptimizerKind;
use crate::cluster::CorrelationMethod;
use crate::error::{Error, Result};
use crate::graph::AdjacencyMode;
use crate::models::CalfConfig;

fn max_epochs() -> usize {
    50
}
fn batch_size() -> usize {
    32
}
fn learning_rate() -> f64 {
    1e-3
}
fn huber_delta() -> f64 {
    1.0
}
fn patience() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    #[serde(default = "learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "huber_delta")]
    pub huber_delta: f64,
    #[serde(default = "patience")]
    pub early_stop_patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: max_epochs(),
            batch_size: batch_size(),
            learning_rate: learning_rate(),
            huber_delta: huber_delta(),
            early_stop_patience: patience(),
            seed: 0,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("max_epochs, batch_size and early_stop_patience must be positive".into()));
        }
        if self.early_stop_patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "early_stop_patience {} must be below max_epochs {}",
                self.early_stop_patience, self.max_epochs
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.huber_delta > 0.0 && self.huber_delta.is_finite()) {
            return Err(Error::Config(format!("huber_delta {} must be positive", self.huber_delta)));
        }
        Ok(())
    }
}

/// NT-GAT settings the grid does not vary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtgatSettings {
    #[serde(default = "symmetric")]
    pub adjacency_mode: AdjacencyMode,
    #[serde(default = "yes")]
    pub self_loops: bool,
    #[serde(default = "lift_dim")]
    pub lift_dim: usize,
    #[serde(default = "gat_out_dim")]
    pub gat_out_dim: usize,
    #[serde(default = "lstm1")]
    pub lstm1_hidden: usize,
    #[serde(default = "lstm2")]
    pub lstm2_hidden: usize,
}

fn symmetric() -> AdjacencyMode {
    AdjacencyMode::Symmetric
}
fn yes() -> bool {
    true
}
fn lift_dim() -> usize {
    8
}
fn gat_out_dim() -> usize {
    16
}
fn lstm1() -> usize {
    64
}
fn lstm2() -> usize {
    128
}

impl Default for NtgatSettings {
    fn default() -> Self {
        Self {
            adjacency_mode: symmetric(),
            self_loops: true,
            lift_dim: lift_dim(),
            gat_out_dim: gat_out_dim(),
            lstm1_hidden: lstm1(),
            lstm2_hidden: lstm2(),
        }
    }
}

/// Fixed per-architecture settings; `calf.horizon`, `input_length` and
/// `n_series` are filled in per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSettings {
    #[serde(default)]
    pub ntgat: NtgatSettings,
    #[serde(default = "calf_template")]
    pub calf: CalfConfig,
}

fn calf_template() -> CalfConfig {
    CalfConfig::new(0, 0, 0)
}

impl Default for ArchSettings {
    fn default() -> Self {
        Self {
            ntgat: NtgatSettings::default(),
            calf: calf_template(),
        }
    }
}

/// Affinity and cluster counts for Cluster-CALF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    #[serde(default)]
    pub method: CorrelationMethod,
    #[serde(default = "clusters")]
    pub k: Vec<usize>,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            method: CorrelationMethod::default(),
            k: clusters(),
        }
    }
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(Error::Config("cluster.k must be a non-empty list of positive counts".into()));
        }
        Ok(())
    }
}

fn horizons() -> Vec<usize> {
    vec![1, 3, 6, 12, 24]
}
fn lengths() -> Vec<usize> {
    vec![24, 168, 336]
}
fn hidden() -> Vec<usize> {
    vec![64]
}
fn dropout() -> Vec<f64> {
    vec![0.2]
}
fn heads() -> Vec<usize> {
    vec![8]
}
fn hops() -> Vec<usize> {
    vec![2]
}
fn clusters() -> Vec<usize> {
    vec![4]
}

/// Horizon × sequence-length grid plus per-architecture value lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "lengths")]
    pub sequence_lengths: Vec<usize>,
    #[serde(default = "hidden")]
    pub lstm_hidden_units: Vec<usize>,
    #[serde(default = "dropout")]
    pub lstm_dropout: Vec<f64>,
    #[serde(default = "heads")]
    pub ntgat_heads: Vec<usize>,
    #[serde(default = "hops")]
    pub ntgat_hops: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            horizons: horizons(),
            sequence_lengths: lengths(),
            lstm_hidden_units: hidden(),
            lstm_dropout: dropout(),
            ntgat_heads: heads(),
            ntgat_hops: hops(),
        }
    }
}

impl GridSpec {
    pub fn single(input_length: usize, horizon: usize) -> Self {
        Self {
            horizons: vec![horizon],
            sequence_lengths: vec![input_length],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists: [(&str, bool); 6] = [
            ("horizons", self.horizons.is_empty() || self.horizons.contains(&0)),
            ("sequence_lengths", self.sequence_lengths.is_empty() || self.sequence_lengths.contains(&0)),
            ("lstm_hidden_units", self.lstm_hidden_units.is_empty() || self.lstm_hidden_units.contains(&0)),
            ("lstm_dropout", self.lstm_dropout.is_empty() || self.lstm_dropout.iter().any(|d| !(0.0..1.0).contains(d))),
            ("ntgat_heads", self.ntgat_heads.is_empty() || self.ntgat_heads.contains(&0)),
            ("ntgat_hops", self.ntgat_hops.is_empty() || self.ntgat_hops.contains(&0)),
        ];
        match lists.iter().find(|(_, bad)| *bad) {
            Some((name, _)) => Err(Error::Config(format!("grid.{name} must be a non-empty list of valid values"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        GridSpec::default().validate().unwrap();
        ClusterSpec::default().validate().unwrap();
    }

    #[test]
    fn patience_must_be_below_max_epochs() {
        let cfg = TrainConfig {
            max_epochs: 3,
            early_stop_patience: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_grid_list_is_named() {
        let g = GridSpec {
            ntgat_hops: vec![],
            ..GridSpec::default()
        };
        assert!(g.validate().unwrap_err().to_string().contains("ntgat_hops"));
    }
}
