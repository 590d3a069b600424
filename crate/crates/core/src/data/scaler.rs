use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::mts::{NetworkMts, RowSpan, SplitRole};
use crate::error::{Error, Result};

/// Per-series standard-score parameters fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub mean: Vec<f64>,
    /// Sample standard deviation; 1 for constant series.
    pub std: Vec<f64>,
    pub fitted_on: RowSpan,
}

/// Fits per-series mean and sample std. Only a training split is accepted.
pub fn fit_scaler(train: &NetworkMts) -> Result<ScalerState> {
    let span = train.span();
    if span.role != SplitRole::Train {
        return Err(Error::Leakage(format!(
            "scaler fit on {:?} rows {}..{}; only the training split may be fitted",
            span.role, span.start, span.end
        )));
    }
    let values = train.values();
    let t = values.nrows();
    if t < 2 {
        return Err(Error::Argument("scaler fit needs at least 2 rows".into()));
    }
    let mut mean = Vec::with_capacity(values.ncols());
    let mut std = Vec::with_capacity(values.ncols());
    for col in values.axis_iter(Axis(1)) {
        let mu = col.sum() / t as f64;
        let var = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (t - 1) as f64;
        let sigma = var.sqrt();
        mean.push(mu);
        std.push(if sigma <= f64::EPSILON * mu.abs().max(1.0) { 1.0 } else { sigma });
    }
    Ok(ScalerState {
        mean,
        std,
        fitted_on: span,
    })
}

impl ScalerState {
    pub fn n_series(&self) -> usize {
        self.mean.len()
    }

    fn check_cols(&self, n: usize) -> Result<()> {
        if n != self.n_series() {
            return Err(Error::shape("scaler series count", self.n_series(), n));
        }
        Ok(())
    }

    pub fn transform_matrix(&self, values: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_cols(values.ncols())?;
        let mut out = values.clone();
        for (n, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (mu, sd) = (self.mean[n], self.std[n]);
            col.mapv_inplace(|x| (x - mu) / sd);
        }
        Ok(out)
    }

    pub fn inverse_matrix(&self, values: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_cols(values.ncols())?;
        let mut out = values.clone();
        for (n, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (mu, sd) = (self.mean[n], self.std[n]);
            col.mapv_inplace(|z| z * sd + mu);
        }
        Ok(out)
    }

    pub fn transform(&self, data: &NetworkMts) -> Result<NetworkMts> {
        data.with_values(self.transform_matrix(data.values())?)
    }

    pub fn inverse_transform(&self, data: &NetworkMts) -> Result<NetworkMts> {
        data.with_values(self.inverse_matrix(data.values())?)
    }

    /// Inverse-scales an S×H×K tensor whose last axis holds the series `columns`.
    pub fn inverse_windows(&self, scaled: &Array3<f64>, columns: &[usize]) -> Result<Array3<f64>> {
        if scaled.dim().2 != columns.len() {
            return Err(Error::shape("series axis", columns.len(), scaled.dim().2));
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n_series()) {
            return Err(Error::Argument(format!("series index {bad} out of range")));
        }
        let mut out = scaled.clone();
        for (k, mut lane) in out.axis_iter_mut(Axis(2)).enumerate() {
            let (mu, sd) = (self.mean[columns[k]], self.std[columns[k]]);
            lane.mapv_inplace(|z| z * sd + mu);
        }
        Ok(out)
    }
}

/// Scaler that may not have been fitted yet.
#[derive(Debug, Clone, Default)]
pub struct StandardScaler {
    state: Option<ScalerState>,
}

impl StandardScaler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns a fitted copy; `self` is left untouched.
    pub fn fit(&self, train: &NetworkMts) -> Result<StandardScaler> {
        Ok(StandardScaler {
            state: Some(fit_scaler(train)?),
        })
    }

    pub fn state(&self) -> Result<&ScalerState> {
        self.state
            .as_ref()
            .ok_or_else(|| Error::State("scaler used before fit".into()))
    }

    pub fn transform(&self, data: &NetworkMts) -> Result<NetworkMts> {
        self.state()?.transform(data)
    }

    pub fn inverse_transform(&self, data: &NetworkMts) -> Result<NetworkMts> {
        self.state()?.inverse_transform(data)
    }
}
