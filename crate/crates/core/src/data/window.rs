use ndarray::{s, Array3, Axis};

use super::mts::{NetworkMts, RowSpan};
use crate::error::{Error, Result};

/// Supervised (input window, target horizon) pairs for direct multi-step training.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// S × L × N
    pub inputs: Array3<f64>,
    /// S × H × N
    pub targets: Array3<f64>,
    /// Row of the first target step in the source block, per sample.
    pub origin_indices: Vec<usize>,
    pub source: RowSpan,
}

/// Sample `i` reads rows `[i, i+L)` and targets rows `[i+L, i+L+H)`.
pub fn make_windows(data: &NetworkMts, input_length: usize, horizon: usize) -> Result<WindowBatch> {
    if input_length == 0 || horizon == 0 {
        return Err(Error::Config("input length and horizon must be positive".into()));
    }
    let t = data.n_rows();
    let need = input_length + horizon;
    if t < need {
        return Err(Error::Config(format!(
            "{t} rows cannot hold a window of L+H = {need} rows"
        )));
    }
    let n = data.n_series();
    let s_count = t - need + 1;
    let values = data.values();
    let mut inputs = Array3::zeros((s_count, input_length, n));
    let mut targets = Array3::zeros((s_count, horizon, n));
    for i in 0..s_count {
        inputs
            .index_axis_mut(Axis(0), i)
            .assign(&values.slice(s![i..i + input_length, ..]));
        targets
            .index_axis_mut(Axis(0), i)
            .assign(&values.slice(s![i + input_length..i + need, ..]));
    }
    Ok(WindowBatch {
        inputs,
        targets,
        origin_indices: (0..s_count).map(|i| i + input_length).collect(),
        source: data.span(),
    })
}

impl WindowBatch {
    pub fn n_samples(&self) -> usize {
        self.inputs.dim().0
    }

    pub fn input_length(&self) -> usize {
        self.inputs.dim().1
    }

    pub fn horizon(&self) -> usize {
        self.targets.dim().1
    }

    pub fn n_series(&self) -> usize {
        self.inputs.dim().2
    }

    /// Samples in the given order.
    pub fn gather(&self, samples: &[usize]) -> (Array3<f64>, Array3<f64>) {
        (
            self.inputs.select(Axis(0), samples),
            self.targets.select(Axis(0), samples),
        )
    }

    /// Same windows restricted to a subset of series.
    pub fn select_series(&self, columns: &[usize]) -> WindowBatch {
        WindowBatch {
            inputs: self.inputs.select(Axis(2), columns),
            targets: self.targets.select(Axis(2), columns),
            origin_indices: self.origin_indices.clone(),
            source: self.source,
        }
    }

    /// Identifies the evaluation windows (source rows and geometry), not the values.
    pub fn fingerprint(&self) -> String {
        format!(
            "{:016x}:{}-{}:L{}:H{}:S{}",
            self.source.dataset,
            self.source.start,
            self.source.end,
            self.input_length(),
            self.horizon(),
            self.n_samples()
        )
    }
}
