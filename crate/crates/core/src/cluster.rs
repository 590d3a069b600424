//! Correlation affinities between series and agglomerative clustering on them.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LeakageGuard, NetworkMts, RowSpan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    #[default]
    Spearman,
    Pearson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub method: CorrelationMethod,
    pub rho: Array2<f64>,
    /// Rows the coefficients were estimated from.
    pub fitted_on: RowSpan,
}

impl CorrelationMatrix {
    pub fn n(&self) -> usize {
        self.rho.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rho[[i, j]]
    }

    /// Fails if the coefficients saw rows outside the training split.
    pub fn check_leakage(&self, guard: &LeakageGuard) -> Result<()> {
        guard.check(&self.fitted_on)
    }

    pub fn to_csv(&self, link_ids: &[String]) -> String {
        let mut out = String::from("link_id");
        for id in link_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (id, row) in link_ids.iter().zip(self.rho.rows()) {
            out.push_str(id);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

/// Centred, unit-norm copy of `x`, or `None` for a constant series.
fn unit_centred(x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let norm = centred.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= f64::EPSILON * mean.abs().max(1.0) * n.sqrt() {
        return None;
    }
    Some(centred.into_iter().map(|v| v / norm).collect())
}

fn correlation_of_columns(columns: &[Vec<f64>]) -> Array2<f64> {
    let n = columns.len();
    let units: Vec<Option<Vec<f64>>> = columns.par_iter().map(|c| unit_centred(c)).collect();
    // each entry is an independent dot product, so the parallel result is
    // bit-identical to a sequential one
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| match (&units[i], &units[j]) {
                    (Some(a), Some(b)) => {
                        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
                    }
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    let mut rho = Array2::eye(n);
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            rho[[i, j]] = v;
            rho[[j, i]] = v;
        }
    }
    rho
}

fn columns_of(data: &NetworkMts) -> Result<Vec<Vec<f64>>> {
    if data.n_rows() < 3 {
        return Err(Error::Argument(format!(
            "correlation needs at least 3 rows, got {}",
            data.n_rows()
        )));
    }
    Ok(data.values().axis_iter(Axis(1)).map(|c| c.to_vec()).collect())
}

/// Spearman rho: Pearson correlation of average-rank transforms.
pub fn spearman_matrix(data: &NetworkMts) -> Result<CorrelationMatrix> {
    let ranked: Vec<Vec<f64>> = columns_of(data)?.par_iter().map(|c| average_ranks(c)).collect();
    Ok(CorrelationMatrix {
        method: CorrelationMethod::Spearman,
        rho: correlation_of_columns(&ranked),
        fitted_on: data.span(),
    })
}

pub fn pearson_matrix(data: &NetworkMts) -> Result<CorrelationMatrix> {
    Ok(CorrelationMatrix {
        method: CorrelationMethod::Pearson,
        rho: correlation_of_columns(&columns_of(data)?),
        fitted_on: data.span(),
    })
}

pub fn correlation_matrix(data: &NetworkMts, method: CorrelationMethod) -> Result<CorrelationMatrix> {
    match method {
        CorrelationMethod::Spearman => spearman_matrix(data),
        CorrelationMethod::Pearson => pearson_matrix(data),
    }
}

/// Partition of N series into k non-empty clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
}

impl ClusterAssignment {
    pub fn new(k: usize, labels: Vec<usize>) -> Result<Self> {
        if k == 0 || k > labels.len() {
            return Err(Error::Argument(format!("k = {k} outside 1..={}", labels.len())));
        }
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            if l >= k {
                return Err(Error::Argument(format!("label {l} outside 0..{k}")));
            }
            sizes[l] += 1;
        }
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Argument(format!("cluster {c} has no members")));
        }
        Ok(Self { k, labels })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Series indices of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == c).collect()
    }

    /// Relabels clusters by `mapping[old] = new`.
    pub fn relabeled(&self, mapping: &[usize]) -> Result<Self> {
        crate::graph::check_permutation(mapping, self.k)?;
        Ok(Self {
            k: self.k,
            labels: self.labels.iter().map(|&l| mapping[l]).collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ClusterAssignment = serde_json::from_str(s)?;
        Self::new(raw.k, raw.labels)
    }
}

/// Average-linkage agglomerative clustering on `1 - rho`.
///
/// Clusters are ordered by their smallest member; among equal distances the
/// lexicographically lowest pair of cluster positions merges first. Output
/// labels are numbered in order of first appearance.
pub fn cluster_series(corr: &CorrelationMatrix, k: usize) -> Result<ClusterAssignment> {
    let n = corr.n();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("k = {k} outside 1..={n}")));
    }
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    // dist[a][b] between active clusters, positions aligned with `clusters`
    let mut dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 1.0 - corr.get(i, j)).collect())
        .collect();

    while clusters.len() > k {
        let m = clusters.len();
        let mut best = (0, 1);
        let mut best_d = f64::INFINITY;
        for a in 0..m {
            for b in a + 1..m {
                if dist[a][b] < best_d {
                    best_d = dist[a][b];
                    best = (a, b);
                }
            }
        }
        let (a, b) = best;
        let (na, nb) = (clusters[a].len() as f64, clusters[b].len() as f64);
        let merged_row: Vec<f64> = (0..m)
            .map(|c| (na * dist[a][c] + nb * dist[b][c]) / (na + nb))
            .collect();
        let absorbed = clusters.remove(b);
        clusters[a].extend(absorbed);
        clusters[a].sort_unstable();
        for (c, &v) in merged_row.iter().enumerate() {
            dist[a][c] = v;
            dist[c][a] = v;
        }
        dist[a][a] = 0.0;
        dist.remove(b);
        for row in &mut dist {
            row.remove(b);
        }
        // a's minimum member cannot change (b's minimum is larger), so order holds
    }

    let mut labels = vec![0; n];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            labels[i] = c;
        }
    }
    ClusterAssignment::new(k, labels)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("labelings", a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |m: u64| (m * m.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().flatten().map(|&m| c2(m)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-12 {
        return Ok(if (index - expected).abs() < 1e-12 { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn mts(columns: &[Vec<f64>]) -> NetworkMts {
        let t = columns[0].len();
        let values = Array2::from_shape_fn((t, columns.len()), |(i, j)| columns[j][i]);
        let ids = (0..columns.len()).map(|i| format!("s{i}")).collect();
        NetworkMts::hourly_from(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(), ids, values).unwrap()
    }

    /// rank by counting: #smaller + (#equal + 1) / 2
    fn naive_rank(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|v| {
                let less = x.iter().filter(|w| *w < v).count() as f64;
                let eq = x.iter().filter(|w| *w == v).count() as f64;
                less + (eq + 1.0) / 2.0
            })
            .collect()
    }

    fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn monotone_pairs() {
        let c = spearman_matrix(&mts(&[vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0], vec![3.0, 2.0, 1.0]]))
            .unwrap();
        assert!((c.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((c.get(0, 2) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_rank_then_pearson_oracle() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = vec![1.0, 4.0, 9.0, 7.0];
        let c = spearman_matrix(&mts(&[x.clone(), y.clone()])).unwrap();
        let expected = naive_pearson(&naive_rank(&x), &naive_rank(&y));
        // ranks [1,2,3,4] vs [1,2,4,3]: rho = 0.8
        assert!((expected - 0.8).abs() < 1e-12);
        assert!((c.get(0, 1) - expected).abs() < 1e-12);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(average_ranks(&[2.0, 2.0, 2.0]), naive_rank(&[2.0, 2.0, 2.0]));
    }

    #[test]
    fn constant_series_correlate_zero() {
        let c = pearson_matrix(&mts(&[vec![4.0; 5], vec![1.0, 2.0, 3.0, 4.0, 6.0]])).unwrap();
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(0, 0), 1.0);
        let s = spearman_matrix(&mts(&[vec![4.0; 5], vec![1.0, 2.0, 3.0, 4.0, 6.0]])).unwrap();
        assert_eq!(s.get(1, 0), 0.0);
    }

    #[test]
    fn too_few_rows() {
        assert!(spearman_matrix(&mts(&[vec![1.0, 2.0], vec![2.0, 1.0]])).is_err());
    }

    fn block_corr(blocks: &[usize]) -> CorrelationMatrix {
        let n = blocks.len();
        let rho = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                1.0
            } else if blocks[i] == blocks[j] {
                1.0
            } else {
                0.1
            }
        });
        CorrelationMatrix {
            method: CorrelationMethod::Spearman,
            rho,
            fitted_on: RowSpan {
                dataset: 0,
                start: 0,
                end: 10,
                role: crate::data::SplitRole::Train,
            },
        }
    }

    /// brute force: the 2-partition minimising total within-cluster distance
    fn best_two_partition(corr: &CorrelationMatrix) -> Vec<usize> {
        let n = corr.n();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << n) - 1 {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let mut cost = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    if labels[i] == labels[j] {
                        cost += 1.0 - corr.get(i, j);
                    }
                }
            }
            if cost < best.0 {
                best = (cost, labels);
            }
        }
        best.1
    }

    #[test]
    fn recovers_two_perfect_blocks() {
        let truth = vec![0, 1, 0, 1, 1, 0];
        let corr = block_corr(&truth);
        let got = cluster_series(&corr, 2).unwrap();
        let brute = best_two_partition(&corr);
        assert_eq!(adjusted_rand_index(&got.labels, &truth).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&brute, &truth).unwrap(), 1.0);
        assert_eq!(got.labels, vec![0, 1, 0, 1, 1, 0]);
    }

    #[test]
    fn k_extremes() {
        let corr = block_corr(&[0, 0, 1, 1, 2]);
        let all = cluster_series(&corr, 5).unwrap();
        assert_eq!(all.labels, vec![0, 1, 2, 3, 4]);
        let one = cluster_series(&corr, 1).unwrap();
        assert_eq!(one.labels, vec![0; 5]);
        assert!(cluster_series(&corr, 0).is_err());
        assert!(cluster_series(&corr, 6).is_err());
    }

    #[test]
    fn ties_merge_lowest_pair_first() {
        // all distances equal: merges (0,1), then ({0,1},2), ...
        let corr = block_corr(&[0, 1, 2, 3]);
        let got = cluster_series(&corr, 3).unwrap();
        assert_eq!(got.labels, vec![0, 0, 1, 2]);
    }

    #[test]
    fn ari_properties() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!(ari < 0.0);
    }

    #[test]
    fn assignment_json_round_trip() {
        let a = ClusterAssignment::new(2, vec![0, 1, 1, 0]).unwrap();
        let back = ClusterAssignment::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
        assert!(ClusterAssignment::from_json(r#"{"k":3,"labels":[0,1,1]}"#).is_err());
    }
}
