//! Synthetic link-traffic generator with latent cluster structure.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

use chrono::{TimeZone, Utc};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::decompose::{DAY, WEEK};
use super::mts::NetworkMts;
use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};
use crate::graph::{line_digraph, LineDigraph, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_links: usize,
    pub n_hours: usize,
    pub n_latent_clusters: usize,
    pub seed: u64,
    /// Noise std as a fraction of each series' baseline level.
    pub noise_level: f64,
    /// AR(1) coefficient of the per-cluster latent factor (hourly).
    pub latent_persistence: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_links: 32,
            n_hours: 2160,
            n_latent_clusters: 4,
            seed: 0,
            noise_level: 0.04,
            latent_persistence: 0.97,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub data: NetworkMts,
    pub ground_truth: ClusterAssignment,
    pub graph: LineDigraph,
    pub network: Network,
}

/// JSON sidecar written next to a generated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub link_ids: Vec<String>,
    pub ground_truth_clusters: Vec<usize>,
    pub graph_arcs: Vec<(usize, usize)>,
    pub seed: u64,
}

impl SynthOutput {
    pub fn sidecar(&self, seed: u64) -> SynthSidecar {
        SynthSidecar {
            link_ids: self.data.link_ids().to_vec(),
            ground_truth_clusters: self.ground_truth.labels.clone(),
            graph_arcs: self.graph.arcs.clone(),
            seed,
        }
    }
}

pub fn synth_generate(n_links: usize, n_hours: usize, n_latent_clusters: usize, seed: u64) -> Result<SynthOutput> {
    synth_generate_with(&SynthConfig {
        n_links,
        n_hours,
        n_latent_clusters,
        seed,
        ..SynthConfig::default()
    })
}

/// Each series is baseline + slow nonlinear trend + daily and weekly cycles
/// (phases shared within a cluster) + its cluster's AR(1) latent factor +
/// Gaussian noise, clipped at zero. Clusters are contiguous regions of the
/// link graph.
pub fn synth_generate_with(cfg: &SynthConfig) -> Result<SynthOutput> {
    let n = cfg.n_links;
    let k = cfg.n_latent_clusters;
    if n < 2 {
        return Err(Error::Argument(format!("n_links = {n} must be at least 2")));
    }
    if cfg.n_hours < 2 * WEEK {
        return Err(Error::Argument(format!(
            "n_hours = {} must be at least {}",
            cfg.n_hours,
            2 * WEEK
        )));
    }
    if k < 1 || k > n {
        return Err(Error::Argument(format!("n_latent_clusters = {k} outside 1..={n}")));
    }
    if !(cfg.noise_level >= 0.0 && cfg.noise_level.is_finite()) {
        return Err(Error::Argument("noise_level must be finite and non-negative".into()));
    }
    if !(0.0..1.0).contains(&cfg.latent_persistence) {
        return Err(Error::Argument("latent_persistence must lie in [0, 1)".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let network = random_network(n, &mut rng);
    let graph = line_digraph(&network)?;
    let labels = regional_clusters(&graph, k, &mut rng);
    let ground_truth = ClusterAssignment::new(k, labels)?;

    let t_len = cfg.n_hours;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let cluster_daily_phase: Vec<f64> = (0..k)
        .map(|c| 2.0 * PI * c as f64 / k as f64 + rng.random_range(-0.2..0.2))
        .collect();
    let cluster_weekly_phase: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let innovation = (1.0 - cfg.latent_persistence.powi(2)).sqrt();
    let latent: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut f = std_normal.sample(&mut rng);
            (0..t_len)
                .map(|_| {
                    f = cfg.latent_persistence * f + innovation * std_normal.sample(&mut rng);
                    f
                })
                .collect()
        })
        .collect();

    let mut values = Array2::zeros((t_len, n));
    for s in 0..n {
        let c = ground_truth.labels[s];
        let base = rng.random_range(50.0..400.0);
        let trend_lin = rng.random_range(-0.15..0.25);
        let trend_curve = rng.random_range(-0.2..0.2);
        let daily_amp = rng.random_range(0.25..0.45);
        let weekly_amp = rng.random_range(0.08..0.18);
        let latent_amp = rng.random_range(0.15..0.3);
        let phase_jitter = rng.random_range(-0.1..0.1);
        for t in 0..t_len {
            let u = t as f64 / t_len as f64;
            let trend = trend_lin * u + trend_curve * (2.0 * PI * u).sin();
            let daily = daily_amp * (2.0 * PI * (t % DAY) as f64 / DAY as f64 + cluster_daily_phase[c] + phase_jitter).sin();
            let weekly = weekly_amp * (2.0 * PI * (t % WEEK) as f64 / WEEK as f64 + cluster_weekly_phase[c]).sin();
            let noise = cfg.noise_level * std_normal.sample(&mut rng);
            let level = base * (1.0 + trend + daily + weekly + latent_amp * latent[c][t] + noise);
            values[[t, s]] = level.max(0.0);
        }
    }

    let start = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut data = NetworkMts::hourly_from(start, graph.node_ids.clone(), values)?;
    data.metadata = BTreeMap::from([
        ("unit".to_string(), "Mbit/s".to_string()),
        ("source".to_string(), "synthetic".to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
    ]);
    Ok(SynthOutput {
        data,
        ground_truth,
        graph,
        network,
    })
}

/// Weakly connected digraph with exactly `n_links` arcs: a random spanning
/// tree whose edges are made bidirectional, then extra random arcs.
fn random_network(n_links: usize, rng: &mut ChaCha8Rng) -> Network {
    let mut m = n_links / 2 + 1;
    while m * (m - 1) < n_links {
        m += 1;
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut tree = Vec::with_capacity(m - 1);
    for i in 1..m {
        let parent = order[rng.random_range(0..i)];
        tree.push((parent, order[i]));
    }
    let mut arcs: Vec<(usize, usize)> = tree.clone();
    for &(a, b) in &tree {
        if arcs.len() == n_links {
            break;
        }
        arcs.push((b, a));
    }
    while arcs.len() < n_links {
        let u = rng.random_range(0..m);
        let v = rng.random_range(0..m);
        if u != v && !arcs.contains(&(u, v)) {
            arcs.push((u, v));
        }
    }
    Network {
        nodes: (0..m).map(|i| format!("r{i}")).collect(),
        arcs,
    }
}

/// Splits a BFS ordering of the (symmetrised) line digraph into k contiguous runs.
fn regional_clusters(graph: &LineDigraph, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = graph.n_nodes();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &graph.arcs {
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let start = rng.random_range(0..n);
    for root in std::iter::once(start).chain(0..n) {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    let mut labels = vec![0; n];
    for (pos, &node) in order.iter().enumerate() {
        labels[node] = pos * k / n;
    }
    labels
}
