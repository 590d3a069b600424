use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::plot::{Chart, Line};
use super::report::{check_same_windows, decrease_pct, MetricReport};
use crate::error::{Error, Result};

/// One trained configuration as seen by the horizon sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub arch: String,
    pub input_length: usize,
    pub horizon: usize,
    pub val_smape: f64,
    pub test_smape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonCurve {
    pub arch: String,
    pub input_length: usize,
    /// `(H, test sMAPE)` in increasing H.
    pub points: Vec<(usize, f64)>,
    /// Horizon of the lowest test sMAPE; the smallest H on ties.
    pub best_horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSweep {
    pub curves: Vec<HorizonCurve>,
}

/// Test sMAPE against horizon per `(arch, L)`. Where several configurations
/// share `(arch, L, H)`, the one with the lowest validation sMAPE is used.
pub fn horizon_sweep_report(points: &[SweepPoint]) -> Result<HorizonSweep> {
    if points.is_empty() {
        return Err(Error::Argument("horizon sweep over zero points".into()));
    }
    let mut chosen: BTreeMap<(String, usize), BTreeMap<usize, &SweepPoint>> = BTreeMap::new();
    for p in points {
        if !p.test_smape.is_finite() || !p.val_smape.is_finite() {
            return Err(Error::Argument(format!("non-finite sMAPE for {} L={} H={}", p.arch, p.input_length, p.horizon)));
        }
        let slot = chosen.entry((p.arch.clone(), p.input_length)).or_default();
        match slot.get(&p.horizon) {
            Some(q) if q.val_smape <= p.val_smape => {}
            _ => {
                slot.insert(p.horizon, p);
            }
        }
    }
    let curves = chosen
        .into_iter()
        .map(|((arch, input_length), by_h)| {
            let points: Vec<(usize, f64)> = by_h.iter().map(|(&h, p)| (h, p.test_smape)).collect();
            // strict `<` keeps the first (smallest) horizon among ties
            let mut best = points[0];
            for &pt in &points[1..] {
                if pt.1 < best.1 {
                    best = pt;
                }
            }
            HorizonCurve {
                arch,
                input_length,
                points,
                best_horizon: best.0,
            }
        })
        .collect();
    Ok(HorizonSweep { curves })
}

impl HorizonSweep {
    pub fn curve(&self, arch: &str, input_length: usize) -> Option<&HorizonCurve> {
        self.curves.iter().find(|c| c.arch == arch && c.input_length == input_length)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("arch,L,H,test_smape,is_best\n");
        for c in &self.curves {
            for &(h, s) in &c.points {
                let _ = writeln!(out, "{},{},{h},{s},{}", c.arch, c.input_length, h == c.best_horizon);
            }
        }
        out
    }

    pub fn to_svg(&self) -> String {
        Chart {
            title: "Test sMAPE by forecast horizon".into(),
            x_label: "horizon H (hours)".into(),
            y_label: "sMAPE (%)".into(),
            lines: self
                .curves
                .iter()
                .map(|c| Line {
                    name: format!("{} L={}", c.arch, c.input_length),
                    points: c.points.iter().map(|&(h, s)| (h as f64, s)).collect(),
                    marked: c.points.iter().position(|&(h, _)| h == c.best_horizon),
                })
                .collect(),
            reference: None,
        }
        .to_svg()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSweepRow {
    pub k: usize,
    pub mean_smape: f64,
    pub mean_mae: f64,
    pub mean_rmse: f64,
    /// Relative sMAPE decrease against the unclustered baseline, in percent.
    pub smape_decrease_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSweep {
    pub baseline_smape: f64,
    pub rows: Vec<ClusterSweepRow>,
    /// Lowest mean sMAPE; the smallest k on ties.
    pub best_k: usize,
}

/// Mean test metrics per cluster count against a single-model baseline.
pub fn cluster_sweep_report(results: &BTreeMap<usize, MetricReport>, baseline: &MetricReport) -> Result<ClusterSweep> {
    if results.is_empty() {
        return Err(Error::Argument("cluster sweep over zero cluster counts".into()));
    }
    check_same_windows(
        std::iter::once(("baseline", baseline)).chain(results.values().map(|r| ("clustered", r))),
    )?;
    let baseline_smape = baseline.mean("smape");
    let rows: Vec<ClusterSweepRow> = results
        .iter()
        .map(|(&k, r)| ClusterSweepRow {
            k,
            mean_smape: r.mean("smape"),
            mean_mae: r.mean("mae"),
            mean_rmse: r.mean("rmse"),
            smape_decrease_pct: decrease_pct(baseline_smape, r.mean("smape")),
        })
        .collect();
    let mut best = &rows[0];
    for r in &rows[1..] {
        if r.mean_smape < best.mean_smape {
            best = r;
        }
    }
    Ok(ClusterSweep {
        baseline_smape,
        best_k: best.k,
        rows,
    })
}

impl ClusterSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,mean_smape,mean_mae,mean_rmse,smape_decrease_pct\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.k,
                r.mean_smape,
                r.mean_mae,
                r.mean_rmse,
                r.smape_decrease_pct.map(|v| v.to_string()).unwrap_or_default()
            );
        }
        out
    }

    pub fn to_svg(&self) -> String {
        Chart {
            title: "Test sMAPE by cluster count".into(),
            x_label: "clusters k".into(),
            y_label: "sMAPE (%)".into(),
            lines: vec![Line {
                name: "clustered".into(),
                points: self.rows.iter().map(|r| (r.k as f64, r.mean_smape)).collect(),
                marked: self.rows.iter().position(|r| r.k == self.best_k),
            }],
            reference: Some(("unclustered".into(), self.baseline_smape)),
        }
        .to_svg()
    }
}

#[cfg(test)]
mod tests {
    use ndarray::Array3;

    use super::*;
    use crate::evaluation::{per_series_report, Units};

    fn pt(arch: &str, l: usize, h: usize, val: f64, test: f64) -> SweepPoint {
        SweepPoint {
            arch: arch.into(),
            input_length: l,
            horizon: h,
            val_smape: val,
            test_smape: test,
        }
    }

    #[test]
    fn curves_pick_by_validation_and_break_ties_low() {
        let sweep = horizon_sweep_report(&[
            pt("lstm", 24, 6, 1.0, 20.0),
            pt("lstm", 24, 1, 1.0, 10.0),
            pt("lstm", 24, 3, 1.0, 10.0),
            pt("lstm", 24, 1, 0.5, 12.0),
            pt("calf", 24, 1, 1.0, 9.0),
        ])
        .unwrap();
        let c = sweep.curve("lstm", 24).unwrap();
        assert_eq!(c.points, vec![(1, 12.0), (3, 10.0), (6, 20.0)]);
        assert_eq!(c.best_horizon, 3);
        assert_eq!(sweep.curve("calf", 24).unwrap().best_horizon, 1);
        assert_eq!(sweep.to_csv().lines().count(), 5);
        assert!(sweep.to_svg().contains("lstm L=24"));
        assert!(matches!(horizon_sweep_report(&[]), Err(Error::Argument(_))));

        let tie = horizon_sweep_report(&[pt("x", 1, 6, 0.0, 5.0), pt("x", 1, 2, 0.0, 5.0)]).unwrap();
        assert_eq!(tie.curves[0].best_horizon, 2);
    }

    fn report(offset: f64, fp: &str) -> MetricReport {
        let t = Array3::from_elem((2, 1, 2), 10.0);
        let p = t.mapv(|v| v + offset);
        per_series_report(&p, &t, &["a".into(), "b".into()], Units::Original)
            .unwrap()
            .with_fingerprint(fp)
    }

    #[test]
    fn cluster_sweep_rows_and_best_k() {
        let base = report(2.0, "w");
        let results: BTreeMap<usize, MetricReport> =
            [(2, report(1.0, "w")), (4, report(1.0, "w")), (8, report(3.0, "w"))].into_iter().collect();
        let sweep = cluster_sweep_report(&results, &base).unwrap();
        assert_eq!(sweep.best_k, 2);
        let r2 = &sweep.rows[0];
        let expect = 100.0 * (base.mean("smape") - r2.mean_smape) / base.mean("smape");
        assert!((r2.smape_decrease_pct.unwrap() - expect).abs() < 1e-12);
        assert!(sweep.rows[2].smape_decrease_pct.unwrap() < 0.0);
        assert_eq!(sweep.to_csv().lines().count(), 4);
        assert!(sweep.to_svg().contains("unclustered"));
    }

    #[test]
    fn cluster_sweep_rejects_other_windows() {
        let results: BTreeMap<usize, MetricReport> = [(2, report(1.0, "other"))].into_iter().collect();
        assert!(matches!(cluster_sweep_report(&results, &report(1.0, "w")), Err(Error::Contract(_))));
    }
}
