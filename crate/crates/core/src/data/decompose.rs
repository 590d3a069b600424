//! Classical additive decomposition into trend, daily and weekly seasonality.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DAY: usize = 24;
pub const WEEK: usize = 168;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionResult {
    pub trend: Vec<f64>,
    pub seasonal_daily: Vec<f64>,
    pub seasonal_weekly: Vec<f64>,
    pub residual: Vec<f64>,
}

impl DecompositionResult {
    pub fn reconstruct(&self) -> Vec<f64> {
        (0..self.trend.len())
            .map(|t| self.trend[t] + self.seasonal_daily[t] + self.seasonal_weekly[t] + self.residual[t])
            .collect()
    }
}

/// Decomposes an hourly series; index 0 is taken as hour-of-week 0.
///
/// Trend is the centred 2x168 moving average (half weight on the two end
/// points), held flat over the first and last 84 hours.
pub fn decompose(series: &[f64]) -> Result<DecompositionResult> {
    let t = series.len();
    if t < 2 * WEEK {
        return Err(Error::Config(format!(
            "decomposition needs at least {} hourly points, got {t}",
            2 * WEEK
        )));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("non-finite value at index {i}")));
    }

    let trend = centered_moving_average(series, WEEK);
    let detrended: Vec<f64> = series.iter().zip(&trend).map(|(x, m)| x - m).collect();

    let daily_profile = period_profile(&detrended, DAY);
    let seasonal_daily: Vec<f64> = (0..t).map(|i| daily_profile[i % DAY]).collect();

    let remainder: Vec<f64> = detrended.iter().zip(&seasonal_daily).map(|(d, s)| d - s).collect();
    let weekly_profile = period_profile(&remainder, WEEK);
    let seasonal_weekly: Vec<f64> = (0..t).map(|i| weekly_profile[i % WEEK]).collect();

    let residual = (0..t)
        .map(|i| series[i] - trend[i] - seasonal_daily[i] - seasonal_weekly[i])
        .collect();

    Ok(DecompositionResult {
        trend,
        seasonal_daily,
        seasonal_weekly,
        residual,
    })
}

fn centered_moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let t = x.len();
    let half = window / 2;
    let mut out = vec![0.0; t];
    if window % 2 == 0 {
        for i in half..t - half {
            let inner: f64 = x[i + 1 - half..i + half].iter().sum();
            out[i] = (inner + 0.5 * (x[i - half] + x[i + half])) / window as f64;
        }
    } else {
        for i in half..t - half {
            out[i] = x[i - half..=i + half].iter().sum::<f64>() / window as f64;
        }
    }
    let first = out[half];
    let last = out[t - half - 1];
    out[..half].fill(first);
    out[t - half..].fill(last);
    out
}

/// Mean by phase, re-centred to sum to zero over one period.
fn period_profile(x: &[f64], period: usize) -> Vec<f64> {
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (i, v) in x.iter().enumerate() {
        sums[i % period] += v;
        counts[i % period] += 1;
    }
    let mut profile: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let centre = profile.iter().sum::<f64>() / period as f64;
    profile.iter_mut().for_each(|p| *p -= centre);
    profile
}
