use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use super::metrics::{smape, standard_metrics, DistributionStats};
use crate::error::{Error, Result};

/// Units of a prediction tensor handed to the reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Original,
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetrics {
    pub smape: f64,
    pub mape: Option<f64>,
    pub mape_skipped: usize,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
}

impl SeriesMetrics {
    fn compute(pred: &[f64], actual: &[f64]) -> Result<Self> {
        let m = standard_metrics(pred, actual)?;
        Ok(Self {
            smape: smape(pred, actual)?,
            mape: m.mape,
            mape_skipped: m.mape_skipped,
            mae: m.mae,
            mse: m.mse,
            rmse: m.rmse,
        })
    }
}

/// Metrics at one horizon step: the mean over series of each series'
/// metric restricted to that step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    /// 1-based step.
    pub step: usize,
    pub smape: f64,
    pub mape: Option<f64>,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
}

pub const METRIC_NAMES: [&str; 5] = ["smape", "mape", "mae", "mse", "rmse"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub link_ids: Vec<String>,
    pub per_series: Vec<SeriesMetrics>,
    pub per_horizon: Vec<HorizonMetrics>,
    /// Distribution across series per metric; MAPE over series where it is defined.
    pub aggregate: BTreeMap<String, DistributionStats>,
    /// Identifies the evaluation windows, for cross-report comparisons.
    pub window_fingerprint: Option<String>,
}

fn column(rows: &[SeriesMetrics], name: &str) -> Vec<f64> {
    rows.iter()
        .filter_map(|r| match name {
            "smape" => Some(r.smape),
            "mape" => r.mape,
            "mae" => Some(r.mae),
            "mse" => Some(r.mse),
            "rmse" => Some(r.rmse),
            _ => unreachable!("unknown metric {name}"),
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-series and per-horizon metrics of S×H×N predictions in original units.
pub fn per_series_report(
    predictions: &Array3<f64>,
    targets: &Array3<f64>,
    link_ids: &[String],
    units: Units,
) -> Result<MetricReport> {
    if units != Units::Original {
        return Err(Error::Contract(
            "metrics must be computed in original units; inverse-transform predictions first".into(),
        ));
    }
    if predictions.dim() != targets.dim() {
        return Err(Error::shape("predictions vs targets (S, H, N)", targets.dim(), predictions.dim()));
    }
    let (s_count, h, n) = targets.dim();
    if link_ids.len() != n {
        return Err(Error::shape("link ids", n, link_ids.len()));
    }
    if s_count == 0 || h == 0 || n == 0 {
        return Err(Error::Argument("empty evaluation tensor".into()));
    }
    let lane = |x: &Array3<f64>, series: usize, step: Option<usize>| -> Vec<f64> {
        match step {
            Some(k) => x.slice(s![.., k, series]).to_vec(),
            None => x.slice(s![.., .., series]).iter().copied().collect(),
        }
    };
    let per_series = (0..n)
        .map(|i| SeriesMetrics::compute(&lane(predictions, i, None), &lane(targets, i, None)))
        .collect::<Result<Vec<_>>>()?;
    let mut per_horizon = Vec::with_capacity(h);
    for k in 0..h {
        let rows = (0..n)
            .map(|i| SeriesMetrics::compute(&lane(predictions, i, Some(k)), &lane(targets, i, Some(k))))
            .collect::<Result<Vec<_>>>()?;
        let mapes = column(&rows, "mape");
        per_horizon.push(HorizonMetrics {
            step: k + 1,
            smape: mean(&column(&rows, "smape")),
            mape: (!mapes.is_empty()).then(|| mean(&mapes)),
            mae: mean(&column(&rows, "mae")),
            mse: mean(&column(&rows, "mse")),
            rmse: mean(&column(&rows, "rmse")),
        });
    }
    let mut aggregate = BTreeMap::new();
    for name in METRIC_NAMES {
        let values = column(&per_series, name);
        if !values.is_empty() {
            aggregate.insert(name.to_string(), DistributionStats::from_values(&values)?);
        }
    }
    Ok(MetricReport {
        link_ids: link_ids.to_vec(),
        per_series,
        per_horizon,
        aggregate,
        window_fingerprint: None,
    })
}

impl MetricReport {
    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.window_fingerprint = Some(fingerprint.into());
        self
    }

    pub fn mean(&self, metric: &str) -> f64 {
        self.aggregate.get(metric).map_or(f64::NAN, |d| d.mean)
    }

    pub fn stats(&self, metric: &str) -> Option<&DistributionStats> {
        self.aggregate.get(metric)
    }

    /// `link_id,smape,mape,mae,mse,rmse`; an empty MAPE cell means undefined.
    pub fn per_series_csv(&self) -> String {
        let mut out = String::from("link_id,smape,mape,mae,mse,rmse\n");
        for (id, r) in self.link_ids.iter().zip(&self.per_series) {
            let _ = writeln!(out, "{id},{},{},{},{},{}", r.smape, fmt_opt(r.mape), r.mae, r.mse, r.rmse);
        }
        out
    }

    pub fn per_horizon_csv(&self) -> String {
        let mut out = String::from("step,smape,mape,mae,mse,rmse\n");
        for r in &self.per_horizon {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.step, r.smape, fmt_opt(r.mape), r.mae, r.mse, r.rmse);
        }
        out
    }

    /// Aggregate statistics as JSON, with the std convention declared.
    pub fn aggregate_json(&self) -> Result<String> {
        let value = serde_json::json!({
            "std_convention": "population",
            "n_series": self.link_ids.len(),
            "horizon": self.per_horizon.len(),
            "window_fingerprint": self.window_fingerprint,
            "mape_skipped_terms": self.per_series.iter().map(|r| r.mape_skipped).sum::<usize>(),
            "aggregate": self.aggregate,
        });
        Ok(serde_json::to_string_pretty(&value)?)
    }
}

/// One row of [`compare_models`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub mean_smape: f64,
    pub median_smape: f64,
    pub std_smape: f64,
    /// `100·(baseline − model)/baseline`; positive means lower error than the baseline.
    pub mean_decrease_pct: Option<f64>,
    pub std_decrease_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

pub(crate) fn decrease_pct(baseline: f64, value: f64) -> Option<f64> {
    (baseline != 0.0).then(|| 100.0 * (baseline - value) / baseline)
}

pub(crate) fn check_same_windows<'a>(reports: impl IntoIterator<Item = (&'a str, &'a MetricReport)>) -> Result<()> {
    let mut first: Option<(&str, &MetricReport)> = None;
    for (name, r) in reports {
        match first {
            None => first = Some((name, r)),
            Some((fname, f)) => {
                if f.window_fingerprint != r.window_fingerprint || f.link_ids != r.link_ids {
                    return Err(Error::Contract(format!(
                        "reports {fname:?} and {name:?} were computed on different evaluation windows ({:?} vs {:?})",
                        f.window_fingerprint, r.window_fingerprint
                    )));
                }
            }
        }
    }
    Ok(())
}

/// sMAPE distribution per model and its change relative to `baseline`.
pub fn compare_models(reports: &BTreeMap<String, MetricReport>, baseline: &str) -> Result<Comparison> {
    let base = reports
        .get(baseline)
        .ok_or_else(|| Error::Argument(format!("baseline {baseline:?} is not among the reports")))?;
    check_same_windows(reports.iter().map(|(k, v)| (k.as_str(), v)))?;
    let b = base.stats("smape").expect("smape always present");
    let rows = reports
        .iter()
        .map(|(name, r)| {
            let d = r.stats("smape").expect("smape always present");
            ComparisonRow {
                model: name.clone(),
                mean_smape: d.mean,
                median_smape: d.median,
                std_smape: d.std,
                mean_decrease_pct: decrease_pct(b.mean, d.mean),
                std_decrease_pct: decrease_pct(b.std, d.std),
            }
        })
        .collect();
    Ok(Comparison {
        baseline: baseline.to_string(),
        rows,
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,mean_smape,median_smape,std_smape,mean_decrease_pct,std_decrease_pct\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.model,
                r.mean_smape,
                r.median_smape,
                r.std_smape,
                fmt_opt(r.mean_decrease_pct),
                fmt_opt(r.std_decrease_pct)
            );
        }
        out
    }
}
