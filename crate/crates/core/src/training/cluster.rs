use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::TrainConfig;
use super::fit::{config_fingerprint, fit};
use super::runlog::{EpochRecord, RunLog};
use crate::cluster::{ClusterAssignment, CorrelationMatrix};
use crate::data::{LeakageGuard, WindowBatch};
use crate::error::{Error, Result};
use crate::models::{CalfConfig, CalfModel, ClusterCalfModel};

/// Logs of a cluster-wise training run.
#[derive(Debug, Clone)]
pub struct ClusterRunLog {
    /// Series-weighted mean of the cluster curves; a cluster that stopped
    /// early contributes its last losses to later epochs.
    pub merged: RunLog,
    pub per_cluster: BTreeMap<usize, RunLog>,
}

/// Trains one CALF per cluster on its member series.
///
/// `corr` is the matrix the assignment was derived from; it must have been
/// estimated on training rows only. `template` supplies everything but
/// `n_series`.
pub fn train_cluster_calf(
    assignment: &ClusterAssignment,
    corr: &CorrelationMatrix,
    guard: &LeakageGuard,
    template: &CalfConfig,
    train_cfg: &TrainConfig,
    train: &WindowBatch,
    val: &WindowBatch,
) -> Result<(ClusterCalfModel, ClusterRunLog)> {
    corr.check_leakage(guard)?;
    if corr.n() != assignment.n() || train.n_series() != assignment.n() {
        return Err(Error::shape(
            "series in (assignment, correlation, windows)",
            assignment.n(),
            (corr.n(), train.n_series()),
        ));
    }
    let trained = (0..assignment.k)
        .into_par_iter()
        .map(|c| {
            let members = assignment.members(c);
            let seed = ClusterCalfModel::cluster_seed(train_cfg.seed, &members);
            let cfg = CalfConfig {
                n_series: members.len(),
                ..template.clone()
            };
            let cluster_train_cfg = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            let mut model = CalfModel::new(cfg.clone(), seed)?;
            let fingerprint = config_fingerprint(&(&cfg, &cluster_train_cfg, &members));
            let log = fit(
                &mut model,
                &cluster_train_cfg,
                &train.select_series(&members),
                &val.select_series(&members),
                &fingerprint,
            )?;
            Ok((c, model, log))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut models = BTreeMap::new();
    let mut per_cluster = BTreeMap::new();
    for (c, model, log) in trained {
        models.insert(c, model);
        per_cluster.insert(c, log);
    }
    let merged = merge_logs(assignment, &per_cluster, &config_fingerprint(&(template, train_cfg, &assignment.labels)));
    let model = ClusterCalfModel::from_parts(assignment.clone(), models)?;
    Ok((model, ClusterRunLog { merged, per_cluster }))
}

fn merge_logs(assignment: &ClusterAssignment, logs: &BTreeMap<usize, RunLog>, fingerprint: &str) -> RunLog {
    let mut merged = RunLog::new("cluster-calf", fingerprint);
    let n = assignment.n() as f64;
    let longest = logs.values().map(|l| l.epochs.len()).max().unwrap_or(0);
    for e in 0..longest {
        let mut rec = EpochRecord {
            epoch: e + 1,
            train_loss: 0.0,
            val_loss: 0.0,
            wall_s: 0.0,
        };
        for (c, log) in logs {
            let w = assignment.members(*c).len() as f64 / n;
            let r = &log.epochs[e.min(log.epochs.len() - 1)];
            rec.train_loss += w * r.train_loss;
            rec.val_loss += w * r.val_loss;
            if e < log.epochs.len() {
                rec.wall_s += r.wall_s;
            }
        }
        merged.epochs.push(rec);
    }
    merged.best_epoch = merged
        .epochs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.val_loss.total_cmp(&b.1.val_loss))
        .map(|(i, _)| i);
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{cluster_series, CorrelationMethod};
    use crate::data::SplitSpec;
    use crate::training::PreparedData;

    fn small_calf(l: usize, h: usize) -> CalfConfig {
        CalfConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            vocab_size: 16,
            n_principal: 4,
            lora_rank: 2,
            ..CalfConfig::new(l, h, 0)
        }
    }

    #[test]
    fn per_cluster_training_matches_standalone_runs() {
        let out = crate::data::synth_generate(6, 500, 2, 9).unwrap();
        let prep = PreparedData::new(&out.data, SplitSpec::default(), None).unwrap();
        let w = prep.windows(12, 2).unwrap();
        let corr = prep.correlation(CorrelationMethod::Spearman).unwrap();
        let assignment = cluster_series(&corr, 2).unwrap();
        let cfg = TrainConfig {
            max_epochs: 3,
            early_stop_patience: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let (model, logs) = train_cluster_calf(&assignment, &corr, &prep.guard(), &small_calf(12, 2), &cfg, &w.train, &w.val).unwrap();
        assert_eq!(logs.per_cluster.len(), 2);
        for c in 0..2 {
            let members = assignment.members(c);
            let seed = ClusterCalfModel::cluster_seed(5, &members);
            let mut alone = CalfModel::new(
                CalfConfig {
                    n_series: members.len(),
                    ..small_calf(12, 2)
                },
                seed,
            )
            .unwrap();
            let log = fit(
                &mut alone,
                &TrainConfig { seed, ..cfg.clone() },
                &w.train.select_series(&members),
                &w.val.select_series(&members),
                "x",
            )
            .unwrap();
            assert_eq!(log.val_losses(), logs.per_cluster[&c].val_losses());
            let xs = w.test.select_series(&members);
            assert_eq!(
                crate::models::Forecaster::predict(&alone, &xs.inputs).unwrap(),
                crate::models::Forecaster::predict(&model.models[&c], &xs.inputs).unwrap()
            );
        }
        let merged_len = logs.per_cluster.values().map(|l| l.epochs.len()).max().unwrap();
        assert_eq!(logs.merged.epochs.len(), merged_len);
    }

    #[test]
    fn correlation_from_validation_rows_is_rejected() {
        let out = crate::data::synth_generate(4, 400, 2, 1).unwrap();
        let prep = PreparedData::new(&out.data, SplitSpec::default(), None).unwrap();
        let w = prep.windows(12, 2).unwrap();
        let leaky = crate::cluster::correlation_matrix(&prep.raw.val, CorrelationMethod::Spearman).unwrap();
        let assignment = cluster_series(&leaky, 2).unwrap();
        let err = train_cluster_calf(
            &assignment,
            &leaky,
            &prep.guard(),
            &small_calf(12, 2),
            &TrainConfig::default(),
            &w.train,
            &w.val,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Leakage(_)));
    }
}
