//! Error metrics in original units, per-series reports, model comparisons
//! and sweep summaries.

mod metrics;
mod plot;
mod report;
mod sweep;

pub use metrics::{quantile, smape, standard_metrics, DistributionStats, StandardMetrics};
pub use plot::{Chart, Line};
pub use report::{
    compare_models, per_series_report, Comparison, ComparisonRow, HorizonMetrics, MetricReport, SeriesMetrics, Units,
    METRIC_NAMES,
};
pub use sweep::{
    cluster_sweep_report, horizon_sweep_report, ClusterSweep, ClusterSweepRow, HorizonCurve, HorizonSweep, SweepPoint,
};
