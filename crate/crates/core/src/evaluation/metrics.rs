use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], actual: &[f64]) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::shape("pred vs actual", actual.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::Argument("metrics need at least one value".into()));
    }
    if pred.iter().chain(actual).any(|v| !v.is_finite()) {
        return Err(Error::Argument("metrics need finite values".into()));
    }
    Ok(())
}

/// One sMAPE term on the 0–200 scale; `0/0` counts as 0.
pub(crate) fn smape_term(p: f64, a: f64) -> f64 {
    let denom = p.abs() + a.abs();
    if denom == 0.0 {
        0.0
    } else {
        200.0 * (p - a).abs() / denom
    }
}

/// Symmetric MAPE in percent, `(100/M) Σ 2|p-a| / (|p|+|a|)`.
pub fn smape(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    let total: f64 = pred.iter().zip(actual).map(|(&p, &a)| smape_term(p, a)).sum();
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardMetrics {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// `None` when every actual value is zero.
    pub mape: Option<f64>,
    /// Terms left out of MAPE because the actual value was zero.
    pub mape_skipped: usize,
}

pub fn standard_metrics(pred: &[f64], actual: &[f64]) -> Result<StandardMetrics> {
    check_pair(pred, actual)?;
    let m = pred.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut pct = 0.0;
    let mut used = 0usize;
    for (&p, &a) in pred.iter().zip(actual) {
        let r = p - a;
        abs += r.abs();
        sq += r * r;
        if a != 0.0 {
            pct += (r / a).abs();
            used += 1;
        }
    }
    let mse = sq / m;
    Ok(StandardMetrics {
        mae: abs / m,
        mse,
        rmse: mse.sqrt(),
        mape: (used > 0).then(|| 100.0 * pct / used as f64),
        mape_skipped: pred.len() - used,
    })
}

/// Summary of a metric across series. `std` is the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub q3: f64,
}

impl DistributionStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("distribution of zero values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("distribution of non-finite values".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            count: values.len(),
            mean,
            median: quantile(&sorted, 0.5),
            std: var.sqrt(),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
        })
    }
}

/// Linear interpolation between closest ranks on sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
