//! Forecasting toolkit for network multivariate time series.
//!
//! Three architectures share one leakage-safe pipeline: an LSTM baseline, a
//! network-temporal graph attention model (NT-GAT) and a cross-modal
//! transformer with LoRA adapters (CALF), optionally fronted by Spearman
//! clustering of the series (Cluster-CALF).

pub mod autograd;
pub mod cluster;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod models;
pub mod training;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
