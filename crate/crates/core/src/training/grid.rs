use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cluster::train_cluster_calf;
use super::config::{ArchSettings, ClusterSpec, GridSpec, TrainConfig};
use super::data::PreparedData;
use super::fit::{train_model, ModelConfig};
use super::runlog::RunLog;
use crate::cluster::cluster_series;
use crate::error::{Error, Result};
use crate::evaluation::MetricReport;
use crate::graph::{k_hop_adjacency, AdjacencySpec};
use crate::models::{AnyModel, Architecture, CalfConfig, LstmConfig, NtgatConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum PointModel {
    Single(ModelConfig),
    ClusterCalf { k: usize, calf: CalfConfig },
}

/// One trainable configuration of the search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub config_id: usize,
    pub arch: Architecture,
    pub horizon: usize,
    pub input_length: usize,
    /// Hyperparameters beyond (L, H), e.g. `hidden=64;dropout=0.2`.
    pub label: String,
    pub model: PointModel,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub point: GridPoint,
    pub val_smape: f64,
    pub test_smape: f64,
    pub test_report: MetricReport,
    pub runlog: RunLog,
    pub model: AnyModel,
}

/// Flat summary of one outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub config_id: usize,
    pub horizon: usize,
    pub input_length: usize,
    pub arch: Architecture,
    pub label: String,
    pub val_smape: f64,
    pub test_smape: f64,
    pub epochs: usize,
    pub wall_s: f64,
}

impl GridOutcome {
    pub fn row(&self) -> GridRow {
        GridRow {
            config_id: self.point.config_id,
            horizon: self.point.horizon,
            input_length: self.point.input_length,
            arch: self.point.arch,
            label: self.point.label.clone(),
            val_smape: self.val_smape,
            test_smape: self.test_smape,
            epochs: self.runlog.epochs.len(),
            wall_s: self.runlog.epochs.iter().map(|e| e.wall_s).sum(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridResults {
    /// Ordered by `(val_smape, config_id)`.
    pub outcomes: Vec<GridOutcome>,
    /// `(L, H, reason)` of skipped combinations.
    pub skipped: Vec<(usize, usize, String)>,
}

impl GridResults {
    pub fn rows(&self) -> Vec<GridRow> {
        self.outcomes.iter().map(GridOutcome::row).collect()
    }

    pub fn best(&self, arch: Architecture) -> Option<&GridOutcome> {
        self.outcomes.iter().find(|o| o.point.arch == arch)
    }

    /// Best-ranked outcome of `arch` at horizon `h` and length `l`.
    pub fn best_at(&self, arch: Architecture, l: usize, h: usize) -> Option<&GridOutcome> {
        self.outcomes
            .iter()
            .find(|o| o.point.arch == arch && o.point.input_length == l && o.point.horizon == h)
    }
}

/// `config_id,H,L,arch,val_smape,test_smape,epochs,wall_s`.
pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("config_id,H,L,arch,val_smape,test_smape,epochs,wall_s\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.config_id, r.horizon, r.input_length, r.arch, r.val_smape, r.test_smape, r.epochs, r.wall_s
        );
    }
    out
}

fn adjacency(prep: &PreparedData, settings: &ArchSettings, hops: usize) -> Result<AdjacencySpec> {
    match &prep.graph {
        Some(g) => k_hop_adjacency(g, hops, settings.ntgat.adjacency_mode, settings.ntgat.self_loops),
        None => {
            log::warn!("no link graph supplied; NT-GAT attends to each series alone");
            Ok(AdjacencySpec::identity(prep.n_series()))
        }
    }
}

/// Enumerates feasible points in `(H, L, arch, hyperparameters)` order.
pub fn grid_points(
    prep: &PreparedData,
    grid: &GridSpec,
    settings: &ArchSettings,
    cluster: &ClusterSpec,
    archs: &[Architecture],
) -> Result<(Vec<GridPoint>, Vec<(usize, usize, String)>)> {
    grid.validate()?;
    cluster.validate()?;
    if archs.is_empty() {
        return Err(Error::Config("no architectures selected".into()));
    }
    let n = prep.n_series();
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &h in &grid.horizons {
        for &l in &grid.sequence_lengths {
            if let Err(e) = prep.feasibility(l, h) {
                log::warn!("skipping L = {l}, H = {h}: {e}");
                skipped.push((l, h, e.to_string()));
                continue;
            }
            let mut push = |arch, label: String, model| {
                points.push(GridPoint {
                    config_id: points.len(),
                    arch,
                    horizon: h,
                    input_length: l,
                    label,
                    model,
                })
            };
            for &arch in archs {
                match arch {
                    Architecture::Lstm => {
                        for &hidden in &grid.lstm_hidden_units {
                            for &dropout in &grid.lstm_dropout {
                                let cfg = LstmConfig {
                                    input_length: l,
                                    hidden_units: hidden,
                                    dropout_rate: dropout,
                                    horizon: h,
                                    n_series: n,
                                };
                                push(arch, format!("hidden={hidden};dropout={dropout}"), PointModel::Single(ModelConfig::Lstm(cfg)));
                            }
                        }
                    }
                    Architecture::Ntgat => {
                        for &hops in &grid.ntgat_hops {
                            let adj = adjacency(prep, settings, hops)?;
                            for &heads in &grid.ntgat_heads {
                                let s = &settings.ntgat;
                                let cfg = NtgatConfig {
                                    n_heads: heads,
                                    lift_dim: s.lift_dim,
                                    gat_out_dim: s.gat_out_dim,
                                    lstm1_hidden: s.lstm1_hidden,
                                    lstm2_hidden: s.lstm2_hidden,
                                    ..NtgatConfig::new(adj.clone(), l, h)
                                };
                                push(arch, format!("heads={heads};hops={hops}"), PointModel::Single(ModelConfig::Ntgat(cfg)));
                            }
                        }
                    }
                    Architecture::Calf => {
                        let cfg = CalfConfig {
                            input_length: l,
                            horizon: h,
                            n_series: n,
                            ..settings.calf.clone()
                        };
                        push(arch, String::new(), PointModel::Single(ModelConfig::Calf(cfg)));
                    }
                    Architecture::ClusterCalf => {
                        for &k in &cluster.k {
                            if k > n {
                                return Err(Error::Config(format!("cluster.k contains {k} but there are {n} series")));
                            }
                            let calf = CalfConfig {
                                input_length: l,
                                horizon: h,
                                n_series: 0,
                                ..settings.calf.clone()
                            };
                            push(arch, format!("k={k}"), PointModel::ClusterCalf { k, calf });
                        }
                    }
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Config(format!(
            "no feasible (L, H) combination for {} training rows",
            prep.raw.train.n_rows()
        )));
    }
    Ok((points, skipped))
}

/// Trains one point and scores it on validation and test windows.
pub fn run_point(prep: &PreparedData, point: &GridPoint, cluster: &ClusterSpec, train_cfg: &TrainConfig) -> Result<GridOutcome> {
    let w = prep.windows(point.input_length, point.horizon)?;
    let (model, runlog) = match &point.model {
        PointModel::Single(cfg) => train_model(cfg, train_cfg, &w.train, &w.val)?,
        PointModel::ClusterCalf { k, calf } => {
            let corr = prep.correlation(cluster.method)?;
            let assignment = cluster_series(&corr, *k)?;
            let (model, logs) = train_cluster_calf(&assignment, &corr, &prep.guard(), calf, train_cfg, &w.train, &w.val)?;
            (AnyModel::ClusterCalf(model), logs.merged)
        }
    };
    let val_report = prep.evaluate(&model.predict(&w.val.inputs)?, &w.val_raw)?;
    let test_report = prep.evaluate(&model.predict(&w.test.inputs)?, &w.test_raw)?;
    log::info!(
        "config {} {} L={} H={} {}: val sMAPE {:.3}, test sMAPE {:.3}",
        point.config_id,
        point.arch,
        point.input_length,
        point.horizon,
        point.label,
        val_report.mean("smape"),
        test_report.mean("smape")
    );
    Ok(GridOutcome {
        point: point.clone(),
        val_smape: val_report.mean("smape"),
        test_smape: test_report.mean("smape"),
        test_report,
        runlog,
        model,
    })
}

/// Exhaustive grid search; every point uses `train_cfg.seed`.
pub fn grid_search(
    prep: &PreparedData,
    grid: &GridSpec,
    settings: &ArchSettings,
    cluster: &ClusterSpec,
    train_cfg: &TrainConfig,
    archs: &[Architecture],
) -> Result<GridResults> {
    train_cfg.validate()?;
    let (points, skipped) = grid_points(prep, grid, settings, cluster, archs)?;
    let mut outcomes = points
        .par_iter()
        .map(|p| run_point(prep, p, cluster, train_cfg))
        .collect::<Result<Vec<_>>>()?;
    outcomes.sort_by(|a, b| {
        a.val_smape
            .total_cmp(&b.val_smape)
            .then(a.point.config_id.cmp(&b.point.config_id))
    });
    Ok(GridResults { outcomes, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SplitSpec};

    fn tiny_settings() -> ArchSettings {
        let mut s = ArchSettings::default();
        s.ntgat.lift_dim = 2;
        s.ntgat.gat_out_dim = 4;
        s.ntgat.lstm1_hidden = 6;
        s.ntgat.lstm2_hidden = 6;
        s.calf = CalfConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            vocab_size: 16,
            n_principal: 4,
            lora_rank: 2,
            ..s.calf
        };
        s
    }

    fn tiny_grid() -> GridSpec {
        GridSpec {
            horizons: vec![1, 3],
            sequence_lengths: vec![12, 400],
            lstm_hidden_units: vec![4],
            lstm_dropout: vec![0.0],
            ntgat_heads: vec![2],
            ntgat_hops: vec![1],
        }
    }

    fn two_clusters() -> ClusterSpec {
        ClusterSpec {
            k: vec![2],
            ..ClusterSpec::default()
        }
    }

    #[test]
    fn infeasible_lengths_are_skipped_and_ids_are_dense() {
        let out = synth_generate(4, 400, 2, 4).unwrap();
        let prep = PreparedData::new(&out.data, SplitSpec::default(), Some(out.graph)).unwrap();
        let (points, skipped) = grid_points(&prep, &tiny_grid(), &tiny_settings(), &two_clusters(), &Architecture::ALL).unwrap();
        assert_eq!(skipped.len(), 2);
        assert!(skipped.iter().all(|s| s.0 == 400));
        assert_eq!(points.len(), 8);
        assert!(points.iter().enumerate().all(|(i, p)| p.config_id == i));
    }

    #[test]
    fn search_ranks_by_validation_and_is_reproducible() {
        let out = synth_generate(4, 400, 2, 4).unwrap();
        let prep = PreparedData::new(&out.data, SplitSpec::default(), Some(out.graph)).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            early_stop_patience: 1,
            ..TrainConfig::default()
        };
        let a = grid_search(&prep, &tiny_grid(), &tiny_settings(), &two_clusters(), &cfg, &Architecture::ALL).unwrap();
        let b = grid_search(&prep, &tiny_grid(), &tiny_settings(), &two_clusters(), &cfg, &Architecture::ALL).unwrap();
        let key = |r: &GridRow| (r.config_id, r.val_smape, r.test_smape);
        assert_eq!(a.rows().iter().map(key).collect::<Vec<_>>(), b.rows().iter().map(key).collect::<Vec<_>>());
        assert!(a.rows().windows(2).all(|w| (w[0].val_smape, w[0].config_id) <= (w[1].val_smape, w[1].config_id)));
        for arch in Architecture::ALL {
            assert_eq!(a.best(arch).unwrap().point.arch, arch);
        }
        let csv = grid_csv(&a.rows());
        assert_eq!(csv.lines().count(), 9);
    }

    #[test]
    fn nothing_feasible_is_a_config_error() {
        let out = synth_generate(3, 400, 1, 4).unwrap();
        let data = out.data.slice_rows(0..200).unwrap();
        let prep = PreparedData::new(&data, SplitSpec::default(), None).unwrap();
        let grid = GridSpec::single(168, 24);
        assert!(matches!(
            grid_points(&prep, &grid, &tiny_settings(), &ClusterSpec::default(), &[Architecture::Lstm]),
            Err(Error::Config(_))
        ));
    }
}
