use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nettemporal::cluster::{adjusted_rand_index, cluster_series};
use nettemporal::data::{decompose, synth_generate_with, NetworkMts, SynthSidecar};
use nettemporal::evaluation::{
    cluster_sweep_report, compare_models, horizon_sweep_report, Chart, Line, MetricReport, SweepPoint,
};
use nettemporal::graph::{k_hop_adjacency, LineDigraph};
use nettemporal::models::{AnyModel, Architecture, Checkpoint};
use nettemporal::training::{grid_csv, grid_points, grid_search, run_point, PointModel, PreparedData, RunLog};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::failure::Failure;
use crate::manifest::Outputs;

/// Dataset plus its sidecar, if one sits next to it.
struct Loaded {
    data: NetworkMts,
    sidecar: Option<SynthSidecar>,
}

fn load(cfg: &PipelineConfig) -> Result<Loaded, Failure> {
    let path = cfg.data_path();
    if !path.exists() {
        return Err(Failure::missing(format!(
            "dataset {} not found; run `generate` or set data.path",
            path.display()
        )));
    }
    let data = NetworkMts::load_csv(&path)?;
    let side = cfg.sidecar_path();
    let sidecar = if side.exists() {
        let s: SynthSidecar = serde_json::from_str(&fs::read_to_string(&side)?)?;
        if s.link_ids != data.link_ids() {
            return Err(Failure::runtime(format!(
                "sidecar {} lists other link ids than {}",
                side.display(),
                path.display()
            )));
        }
        Some(s)
    } else {
        log::warn!("no sidecar at {}; running without a link graph", side.display());
        None
    };
    Ok(Loaded { data, sidecar })
}

fn prepare(cfg: &PipelineConfig) -> Result<(PreparedData, Option<SynthSidecar>), Failure> {
    let loaded = load(cfg)?;
    let graph = match &loaded.sidecar {
        Some(s) => Some(LineDigraph::new(s.link_ids.clone(), s.graph_arcs.clone())?),
        None => None,
    };
    let prep = PreparedData::new(&loaded.data, cfg.split, graph)?;
    Ok((prep, loaded.sidecar))
}

fn runlog_jsonl(log: &RunLog) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf)?;
    Ok(buf)
}

pub fn generate(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), Failure> {
    let synth = cfg
        .data
        .synth
        .as_ref()
        .ok_or_else(|| Failure::config("data.synth: `generate` needs a [data.synth] section"))?;
    let generated = synth_generate_with(&synth.to_config(cfg.seed))?;
    let mut csv = Vec::new();
    generated.data.write_csv_to(&mut csv)?;
    let path = out.write_at(cfg.data_path(), csv)?;
    let sidecar = serde_json::to_string_pretty(&generated.sidecar(cfg.seed))? + "\n";
    out.write_at(cfg.sidecar_path(), sidecar)?;
    log::info!(
        "wrote {} links x {} hours to {}",
        generated.data.n_series(),
        generated.data.n_rows(),
        path.display()
    );
    Ok(())
}

pub fn decompose_cmd(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), Failure> {
    let loaded = load(cfg)?;
    let data = &loaded.data;
    let mut components = String::from("link_id,hour,observed,trend,seasonal_daily,seasonal_weekly,residual\n");
    let mut summary = String::from("link_id,daily_amplitude,weekly_amplitude,residual_std,max_reconstruction_error\n");
    let mut chart = None;
    for (n, id) in data.link_ids().iter().enumerate() {
        let series = data.series(n);
        let d = decompose(&series)?;
        for t in 0..series.len() {
            let _ = writeln!(
                components,
                "{id},{t},{},{},{},{},{}",
                series[t], d.trend[t], d.seasonal_daily[t], d.seasonal_weekly[t], d.residual[t]
            );
        }
        let span = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean_r = d.residual.iter().sum::<f64>() / d.residual.len() as f64;
        let std_r = (d.residual.iter().map(|r| (r - mean_r).powi(2)).sum::<f64>() / d.residual.len() as f64).sqrt();
        let err = d
            .reconstruct()
            .iter()
            .zip(&series)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let _ = writeln!(
            summary,
            "{id},{},{},{std_r},{err}",
            span(&d.seasonal_daily),
            span(&d.seasonal_weekly)
        );
        if n == 0 {
            let two_weeks = series.len().min(2 * nettemporal::data::WEEK);
            let line = |name: &str, v: &[f64]| Line {
                name: name.into(),
                points: v[..two_weeks].iter().enumerate().map(|(t, &y)| (t as f64, y)).collect(),
                marked: None,
            };
            chart = Some(Chart {
                title: format!("Decomposition of {id}"),
                x_label: "hour".into(),
                y_label: data.metadata.get("unit").cloned().unwrap_or_default(),
                lines: vec![
                    line("observed", &series),
                    line("trend", &d.trend),
                    line("daily", &d.seasonal_daily),
                    line("weekly", &d.seasonal_weekly),
                ],
                reference: None,
            });
        }
    }
    out.write("decompose/components.csv", components)?;
    out.write("decompose/summary.csv", summary)?;
    if let Some(c) = chart {
        out.write("decompose/first_series.svg", c.to_svg())?;
    }
    Ok(())
}

pub fn cluster(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), Failure> {
    let (prep, sidecar) = prepare(cfg)?;
    let n = prep.n_series();
    let corr = prep.correlation(cfg.cluster.method)?;
    out.write("cluster/correlation.csv", corr.to_csv(prep.link_ids()))?;
    let mut summary = String::from("k,sizes,adjusted_rand_vs_ground_truth\n");
    for &k in &cfg.cluster.k {
        if k > n {
            return Err(Failure::config(format!("cluster.k: {k} exceeds the {n} series")));
        }
        let a = cluster_series(&corr, k)?;
        out.write(format!("cluster/assignment_k{k}.json"), a.to_json()? + "\n")?;
        let sizes: Vec<String> = (0..k).map(|c| a.members(c).len().to_string()).collect();
        let ari = match &sidecar {
            Some(s) => adjusted_rand_index(&a.labels, &s.ground_truth_clusters)?.to_string(),
            None => String::new(),
        };
        let _ = writeln!(summary, "{k},{},{ari}", sizes.join(";"));
    }
    out.write("cluster/summary.csv", summary)?;
    if let Some(g) = &prep.graph {
        for &hops in &cfg.grid.ntgat_hops {
            let adj = k_hop_adjacency(g, hops, cfg.models.ntgat.adjacency_mode, cfg.models.ntgat.self_loops)?;
            out.write(format!("cluster/adjacency_hops{hops}.txt"), adj.to_edge_list())?;
        }
    }
    Ok(())
}

/// Grid point as listed in `sweep/points.json` and `train/<arch>.point.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PointSummary {
    config_id: usize,
    arch: Architecture,
    horizon: usize,
    input_length: usize,
    label: String,
    k: Option<usize>,
}

impl PointSummary {
    fn of(p: &nettemporal::training::GridPoint) -> Self {
        Self {
            config_id: p.config_id,
            arch: p.arch,
            horizon: p.horizon,
            input_length: p.input_length,
            label: p.label.clone(),
            k: match &p.model {
                PointModel::ClusterCalf { k, .. } => Some(*k),
                PointModel::Single(_) => None,
            },
        }
    }
}

fn checkpoint_path(out: &Path, arch: Architecture) -> std::path::PathBuf {
    out.join("train").join(format!("{arch}.checkpoint.json"))
}

/// Trains each selected architecture at the first feasible grid point.
pub fn train(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), Failure> {
    let (prep, _) = prepare(cfg)?;
    let (points, _) = grid_points(&prep, &cfg.grid, &cfg.models, &cfg.cluster, &cfg.archs)?;
    for &arch in &cfg.archs {
        let point = points
            .iter()
            .find(|p| p.arch == arch)
            .ok_or_else(|| Failure::config(format!("grid: no feasible point for {arch}")))?;
        log::info!("training {arch} at L = {}, H = {}", point.input_length, point.horizon);
        let outcome = run_point(&prep, point, &cfg.cluster, &cfg.train)?;
        let path = checkpoint_path(out.root(), arch);
        fs::create_dir_all(path.parent().expect("has parent"))?;
        outcome.model.to_checkpoint(cfg.seed).save(&path)?;
        out.register(&path)?;
        out.write(format!("train/{arch}.runlog.jsonl"), runlog_jsonl(&outcome.runlog)?)?;
        out.write(
            format!("train/{arch}.point.json"),
            serde_json::to_string_pretty(&PointSummary::of(point))? + "\n",
        )?;
    }
    Ok(())
}

fn write_report(out: &mut Outputs, stem: &str, report: &MetricReport) -> Result<(), Failure> {
    out.write(format!("{stem}.per_series.csv"), report.per_series_csv())?;
    out.write(format!("{stem}.per_horizon.csv"), report.per_horizon_csv())?;
    out.write(format!("{stem}.aggregate.json"), report.aggregate_json()? + "\n")?;
    Ok(())
}

fn baseline_of<'a>(names: impl IntoIterator<Item = &'a String>, preferred: &str) -> Option<String> {
    let names: Vec<&String> = names.into_iter().collect();
    names
        .iter()
        .find(|n| n.as_str() == preferred)
        .or(names.first())
        .map(|s| s.to_string())
}

/// Scores trained checkpoints on the test windows.
pub fn evaluate(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), Failure> {
    let (prep, _) = prepare(cfg)?;
    let mut reports = BTreeMap::new();
    for &arch in &cfg.archs {
        let path = checkpoint_path(out.root(), arch);
        if !path.exists() {
            return Err(Failure::missing(format!("checkpoint {} not found; run `train` first", path.display())));
        }
        let model = AnyModel::from_checkpoint(&Checkpoint::load(&path)?)?;
        if model.n_series() != prep.n_series() {
            return Err(Failure::runtime(format!(
                "checkpoint {} expects {} series, dataset has {}",
                path.display(),
                model.n_series(),
                prep.n_series()
            )));
        }
        let w = prep.windows(model.input_length(), model.horizon())?;
        let report = prep.evaluate(&model.predict(&w.test.inputs)?, &w.test_raw)?;
        write_report(out, &format!("evaluate/{arch}"), &report)?;
        reports.insert(arch.to_string(), report);
    }
    if reports.len() > 1 {
        let base = baseline_of(reports.keys(), Architecture::Lstm.as_str()).expect("non-empty");
        let fp = reports[&base].window_fingerprint.clone();
        let same: BTreeMap<String, MetricReport> = reports
            .iter()
            .filter(|(name, r)| {
                let keep = r.window_fingerprint == fp;
                if !keep {
                    log::warn!("{name} was evaluated on other windows than {base}; left out of the comparison");
                }
                keep
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        out.write("evaluate/comparison.csv", compare_models(&same, &base)?.to_csv())?;
    }
    Ok(())
}

/// Full grid search over the selected architectures.
pub fn sweep(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), Failure> {
    let (prep, _) = prepare(cfg)?;
    let results = grid_search(&prep, &cfg.grid, &cfg.models, &cfg.cluster, &cfg.train, &cfg.archs)?;
    let mut by_id: Vec<_> = results.outcomes.iter().collect();
    by_id.sort_by_key(|o| o.point.config_id);
    out.write("sweep/grid.csv", grid_csv(&results.rows()))?;
    let points: Vec<PointSummary> = by_id.iter().map(|o| PointSummary::of(&o.point)).collect();
    out.write("sweep/points.json", serde_json::to_string_pretty(&points)? + "\n")?;
    for o in &by_id {
        let id = o.point.config_id;
        out.write(format!("sweep/reports/config_{id}.json"), serde_json::to_string(&o.test_report)? + "\n")?;
        out.write(format!("sweep/runlogs/config_{id}.jsonl"), runlog_jsonl(&o.runlog)?)?;
    }
    let mut skipped = String::from("L,H,reason\n");
    for (l, h, why) in &results.skipped {
        let _ = writeln!(skipped, "{l},{h},\"{}\"", why.replace('"', "'"));
    }
    out.write("sweep/skipped.csv", skipped)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct GridCsvRow {
    config_id: usize,
    #[serde(rename = "H")]
    horizon: usize,
    #[serde(rename = "L")]
    input_length: usize,
    arch: String,
    val_smape: f64,
    test_smape: f64,
}

fn read_sweep(root: &Path) -> Result<Vec<(PointSummary, GridCsvRow, MetricReport)>, Failure> {
    let need = |p: std::path::PathBuf| -> Result<std::path::PathBuf, Failure> {
        if p.exists() {
            Ok(p)
        } else {
            Err(Failure::missing(format!("{} not found; run `sweep` first", p.display())))
        }
    };
    let points: Vec<PointSummary> = serde_json::from_str(&fs::read_to_string(need(root.join("sweep/points.json"))?)?)?;
    let mut reader = csv::Reader::from_path(need(root.join("sweep/grid.csv"))?)
        .map_err(|e| Failure::runtime(format!("grid.csv: {e}")))?;
    let mut rows: BTreeMap<usize, GridCsvRow> = BTreeMap::new();
    for r in reader.deserialize() {
        let r: GridCsvRow = r.map_err(|e| Failure::runtime(format!("grid.csv: {e}")))?;
        rows.insert(r.config_id, r);
    }
    let mut all = Vec::with_capacity(points.len());
    for p in points {
        let row = rows
            .remove(&p.config_id)
            .ok_or_else(|| Failure::runtime(format!("grid.csv has no row for config {}", p.config_id)))?;
        if row.arch != p.arch.as_str() || row.horizon != p.horizon || row.input_length != p.input_length {
            return Err(Failure::runtime(format!("grid.csv row {} disagrees with points.json", p.config_id)));
        }
        let path = need(root.join(format!("sweep/reports/config_{}.json", p.config_id)))?;
        let report: MetricReport = serde_json::from_str(&fs::read_to_string(path)?)?;
        all.push((p, row, report));
    }
    Ok(all)
}

/// Tables and figures from a finished sweep.
pub fn report(_cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), Failure> {
    let sweep = read_sweep(out.root())?;
    if sweep.is_empty() {
        return Err(Failure::runtime("the sweep holds no grid points".to_string()));
    }
    let mut table = String::from(
        "config_id,H,L,arch,params,val_smape,test_smape,test_median_smape,test_std_smape,test_mae,test_rmse\n",
    );
    for (p, row, r) in &sweep {
        let s = r.stats("smape").expect("smape present");
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.config_id,
            p.horizon,
            p.input_length,
            p.arch,
            p.label,
            row.val_smape,
            row.test_smape,
            s.median,
            s.std,
            r.mean("mae"),
            r.mean("rmse")
        );
    }
    out.write("report/grid_report.csv", table)?;

    let sweep_points: Vec<SweepPoint> = sweep
        .iter()
        .map(|(p, row, _)| SweepPoint {
            arch: p.arch.to_string(),
            input_length: p.input_length,
            horizon: p.horizon,
            val_smape: row.val_smape,
            test_smape: row.test_smape,
        })
        .collect();
    let hs = horizon_sweep_report(&sweep_points)?;
    out.write("report/horizon_sweep.csv", hs.to_csv())?;
    out.write("report/horizon_sweep.svg", hs.to_svg())?;

    // best validation configuration per (L, H, arch) and, for Cluster-CALF, per k
    let mut best: BTreeMap<(usize, usize), BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    let mut per_k: BTreeMap<(usize, usize), BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for (i, (p, row, _)) in sweep.iter().enumerate() {
        let slot = best.entry((p.input_length, p.horizon)).or_default();
        let e = slot.entry(p.arch.to_string()).or_insert((row.val_smape, i));
        if row.val_smape < e.0 {
            *e = (row.val_smape, i);
        }
        if let Some(k) = p.k {
            let slot = per_k.entry((p.input_length, p.horizon)).or_default();
            let e = slot.entry(k).or_insert((row.val_smape, i));
            if row.val_smape < e.0 {
                *e = (row.val_smape, i);
            }
        }
    }
    for ((l, h), archs) in &best {
        if archs.len() < 2 {
            continue;
        }
        let reports: BTreeMap<String, MetricReport> =
            archs.iter().map(|(a, &(_, i))| (a.clone(), sweep[i].2.clone())).collect();
        let base = baseline_of(reports.keys(), Architecture::Lstm.as_str()).expect("non-empty");
        out.write(format!("report/comparison_L{l}_H{h}.csv"), compare_models(&reports, &base)?.to_csv())?;
    }
    for ((l, h), ks) in &per_k {
        let Some(&(_, calf)) = best.get(&(*l, *h)).and_then(|a| a.get(Architecture::Calf.as_str())) else {
            continue;
        };
        let results: BTreeMap<usize, MetricReport> = ks.iter().map(|(&k, &(_, i))| (k, sweep[i].2.clone())).collect();
        let cs = cluster_sweep_report(&results, &sweep[calf].2)?;
        out.write(format!("report/cluster_sweep_L{l}_H{h}.csv"), cs.to_csv())?;
        out.write(format!("report/cluster_sweep_L{l}_H{h}.svg"), cs.to_svg())?;
    }
    Ok(())
}
