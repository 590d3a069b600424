use ndarray::Array3;

use crate::cluster::{correlation_matrix, CorrelationMatrix, CorrelationMethod};
use crate::data::{fit_scaler, make_windows, split, LeakageGuard, NetworkMts, ScalerState, SplitSpec, Splits, WindowBatch};
use crate::error::{Error, Result};
use crate::evaluation::{per_series_report, MetricReport, Units};
use crate::graph::LineDigraph;

/// Fewest training windows a grid point may train on.
pub const MIN_TRAIN_WINDOWS: usize = 32;

/// A dataset split chronologically and standardised with training statistics.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub raw: Splits,
    pub scaled: Splits,
    pub scaler: ScalerState,
    /// Line digraph with nodes in the same order as the series.
    pub graph: Option<LineDigraph>,
    pub spec: SplitSpec,
}

/// Scaled windows for fitting plus raw targets for scoring.
#[derive(Debug, Clone)]
pub struct PreparedWindows {
    pub train: WindowBatch,
    pub val: WindowBatch,
    pub test: WindowBatch,
    pub val_raw: WindowBatch,
    pub test_raw: WindowBatch,
}

impl PreparedData {
    pub fn new(data: &NetworkMts, spec: SplitSpec, graph: Option<LineDigraph>) -> Result<Self> {
        if let Some(g) = &graph {
            if g.node_ids.as_slice() != data.link_ids() {
                return Err(Error::Integrity(
                    "graph node ids do not match the dataset link ids in order".into(),
                ));
            }
        }
        let raw = split(data, &spec)?;
        let scaler = fit_scaler(&raw.train)?;
        raw.guard().check(&scaler.fitted_on)?;
        let scaled = Splits {
            train: scaler.transform(&raw.train)?,
            val: scaler.transform(&raw.val)?,
            test: scaler.transform(&raw.test)?,
        };
        Ok(Self {
            raw,
            scaled,
            scaler,
            graph,
            spec,
        })
    }

    pub fn link_ids(&self) -> &[String] {
        self.raw.train.link_ids()
    }

    pub fn n_series(&self) -> usize {
        self.raw.train.n_series()
    }

    pub fn guard(&self) -> LeakageGuard {
        self.raw.guard()
    }

    /// Errors unless `(L, H)` leaves enough training windows and fits val/test.
    pub fn feasibility(&self, input_length: usize, horizon: usize) -> Result<()> {
        self.raw.check_windowing(&self.spec, input_length, horizon)?;
        let train_windows = self.raw.train.n_rows() + 1 - (input_length + horizon);
        if train_windows < MIN_TRAIN_WINDOWS {
            return Err(Error::Config(format!(
                "L = {input_length}, H = {horizon} leaves {train_windows} training windows; need {MIN_TRAIN_WINDOWS}"
            )));
        }
        Ok(())
    }

    pub fn windows(&self, input_length: usize, horizon: usize) -> Result<PreparedWindows> {
        self.feasibility(input_length, horizon)?;
        Ok(PreparedWindows {
            train: make_windows(&self.scaled.train, input_length, horizon)?,
            val: make_windows(&self.scaled.val, input_length, horizon)?,
            test: make_windows(&self.scaled.test, input_length, horizon)?,
            val_raw: make_windows(&self.raw.val, input_length, horizon)?,
            test_raw: make_windows(&self.raw.test, input_length, horizon)?,
        })
    }

    /// Correlations estimated on the raw training split only.
    pub fn correlation(&self, method: CorrelationMethod) -> Result<CorrelationMatrix> {
        let corr = correlation_matrix(&self.raw.train, method)?;
        corr.check_leakage(&self.guard())?;
        Ok(corr)
    }

    /// Inverse-scales predictions and scores them against raw windows.
    pub fn evaluate(&self, scaled_predictions: &Array3<f64>, raw: &WindowBatch) -> Result<MetricReport> {
        let columns: Vec<usize> = (0..self.n_series()).collect();
        let predictions = self.scaler.inverse_windows(scaled_predictions, &columns)?;
        Ok(per_series_report(&predictions, &raw.targets, self.link_ids(), Units::Original)?
            .with_fingerprint(raw.fingerprint()))
    }
}
