//! The three forecasting architectures and their shared plumbing.
//!
//! Every model maps an S×L×N input window batch to S×H×N predictions in
//! scaled units. Inverse scaling happens in the pipeline, not here.

mod calf;
mod checkpoint;
mod cluster_calf;
mod gat;
mod lstm;
mod pca;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use calf::{calf_losses, CalfConfig, CalfForward, CalfModel, LoraTarget};
pub use checkpoint::{
    load_vocab_binary, load_vocab_csv, save_vocab_binary, AnyModel, Checkpoint, CheckpointManifest, CHECKPOINT_VERSION,
};
pub use cluster_calf::ClusterCalfModel;
pub use gat::{gat_layer, GatLayer, GatOutput, NtgatConfig, NtgatModel};
pub use lstm::{LstmConfig, LstmLayer, LstmModel};
pub use pca::principal_word_embeddings;

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Lstm,
    Ntgat,
    Calf,
    ClusterCalf,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Lstm,
        Architecture::Ntgat,
        Architecture::Calf,
        Architecture::ClusterCalf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Lstm => "lstm",
            Architecture::Ntgat => "ntgat",
            Architecture::Calf => "calf",
            Architecture::ClusterCalf => "cluster-calf",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown architecture {s:?} (lstm|ntgat|calf|cluster-calf)")))
    }
}

/// Training mode enables dropout and, for CALF, the textual branch.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Infer,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Predictions of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOutput {
    /// S × H × N
    pub predictions: Array3<f64>,
    /// Per-layer hidden states of the (temporal, textual) CALF branches.
    pub branch_hidden: Option<(Vec<Array2<f64>>, Vec<Array2<f64>>)>,
}

/// Scalar training objective and its reported components.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub supervised: Var,
    pub feature: Option<Var>,
    pub output: Option<Var>,
}

/// A trainable direct multi-horizon forecaster.
pub trait Forecaster: Send + Sync {
    fn architecture(&self) -> Architecture;
    fn input_length(&self) -> usize;
    fn horizon(&self) -> usize;
    fn n_series(&self) -> usize;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn config_json(&self) -> serde_json::Value;

    /// Records the training objective for one mini-batch (scaled units).
    fn loss(&self, tape: &mut Tape, inputs: &Array3<f64>, targets: &Array3<f64>, mode: Mode<'_>, huber_delta: f64) -> Result<LossTerms>;

    /// Inference-mode predictions, S×H×N.
    fn predict(&self, inputs: &Array3<f64>) -> Result<Array3<f64>>;
}

pub(crate) const PREDICT_CHUNK: usize = 128;

/// Runs `f` over chunks of samples and stacks the results.
pub(crate) fn predict_chunked<F>(inputs: &Array3<f64>, horizon: usize, n: usize, f: F) -> Result<Array3<f64>>
where
    F: Fn(&Array3<f64>) -> Result<Array3<f64>>,
{
    let s_count = inputs.dim().0;
    let mut out = Array3::zeros((s_count, horizon, n));
    let mut start = 0;
    while start < s_count {
        let end = (start + PREDICT_CHUNK).min(s_count);
        let chunk = inputs.slice(s![start..end, .., ..]).to_owned();
        out.slice_mut(s![start..end, .., ..]).assign(&f(&chunk)?);
        start = end;
    }
    Ok(out)
}

pub(crate) fn check_inputs(inputs: &Array3<f64>, input_length: usize, n: usize) -> Result<()> {
    let (s_count, l, k) = inputs.dim();
    if s_count == 0 || l != input_length || k != n {
        return Err(Error::shape("batch inputs (S, L, N)", ("S>0", input_length, n), inputs.dim()));
    }
    Ok(())
}

pub(crate) fn check_targets(targets: &Array3<f64>, s_count: usize, horizon: usize, n: usize) -> Result<()> {
    if targets.dim() != (s_count, horizon, n) {
        return Err(Error::shape("batch targets (S, H, N)", (s_count, horizon, n), targets.dim()));
    }
    Ok(())
}

/// S×H×N → S×(H·N), column `h·N + n`.
pub(crate) fn flatten_horizon(x: &Array3<f64>) -> Array2<f64> {
    let (s_count, h, n) = x.dim();
    x.as_standard_layout()
        .to_owned()
        .into_shape_with_order((s_count, h * n))
        .expect("standard layout")
}

pub(crate) fn unflatten_horizon(x: &Array2<f64>, h: usize, n: usize) -> Array3<f64> {
    let s_count = x.nrows();
    x.as_standard_layout()
        .to_owned()
        .into_shape_with_order((s_count, h, n))
        .expect("standard layout")
}

/// S×T×N → (S·N)×T, row `s·N + n` holding series n of sample s.
pub(crate) fn series_major(x: &Array3<f64>) -> Array2<f64> {
    let (s_count, t, n) = x.dim();
    let mut out = Array2::zeros((s_count * n, t));
    for si in 0..s_count {
        for ni in 0..n {
            out.row_mut(si * n + ni).assign(&x.slice(s![si, .., ni]));
        }
    }
    out
}

/// Inverse of [`series_major`].
pub(crate) fn from_series_major(x: &Array2<f64>, n: usize) -> Array3<f64> {
    let (rows, t) = x.dim();
    let s_count = rows / n;
    let mut out = Array3::zeros((s_count, t, n));
    for si in 0..s_count {
        for ni in 0..n {
            out.slice_mut(s![si, .., ni]).assign(&x.row(si * n + ni));
        }
    }
    out
}

/// Time step `t` of every sample: S×N.
pub(crate) fn time_slice(x: &Array3<f64>, t: usize) -> Array2<f64> {
    x.index_axis(Axis(1), t).to_owned()
}

/// Inverted-dropout mask with keep probability `1 - rate`.
pub(crate) fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rate: f64) -> Array2<f64> {
    use rand::Rng;
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_helpers_invert() {
        let x = Array3::from_shape_fn((2, 3, 4), |(a, b, c)| (a * 100 + b * 10 + c) as f64);
        assert_eq!(unflatten_horizon(&flatten_horizon(&x), 3, 4), x);
        assert_eq!(from_series_major(&series_major(&x), 4), x);
        let flat = flatten_horizon(&x);
        assert_eq!(flat[[1, 2 * 4 + 3]], x[[1, 2, 3]]);
        let sm = series_major(&x);
        assert_eq!(sm[[4 + 2, 1]], x[[1, 1, 2]]);
    }

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.as_str().parse::<Architecture>().unwrap(), a);
        }
        assert!("gpt".parse::<Architecture>().is_err());
    }
}
