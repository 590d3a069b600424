//! Line digraphs over network links and k-hop reachability masks.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directed network: routers (nodes) and links (arcs).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    pub nodes: Vec<String>,
    pub arcs: Vec<(usize, usize)>,
}

impl Network {
    pub fn arc_name(&self, arc: (usize, usize)) -> String {
        format!("{}->{}", self.nodes[arc.0], self.nodes[arc.1])
    }
}

/// Graph whose nodes are network links; arc (a, b) means link a feeds link b.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineDigraph {
    pub node_ids: Vec<String>,
    pub arcs: Vec<(usize, usize)>,
}

impl LineDigraph {
    pub fn new(node_ids: Vec<String>, arcs: Vec<(usize, usize)>) -> Result<Self> {
        let n = node_ids.len();
        let mut seen = HashSet::new();
        for &(a, b) in &arcs {
            if a >= n || b >= n {
                return Err(Error::Argument(format!("arc ({a}, {b}) outside 0..{n}")));
            }
            if a == b {
                return Err(Error::Argument(format!("self-arc on node {a}")));
            }
            if !seen.insert((a, b)) {
                return Err(Error::Argument(format!("duplicate arc ({a}, {b})")));
            }
        }
        Ok(Self { node_ids, arcs })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes();
        check_permutation(perm, n)?;
        let mut ids = vec![String::new(); n];
        for (i, id) in self.node_ids.iter().enumerate() {
            ids[perm[i]] = id.clone();
        }
        let arcs = self.arcs.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        Self::new(ids, arcs)
    }

    /// True when the underlying undirected graph is connected.
    pub fn is_weakly_connected(&self) -> bool {
        let n = self.n_nodes();
        if n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.arcs {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut hit = vec![false; n];
    if perm.len() != n {
        return Err(Error::shape("permutation", n, perm.len()));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut hit[p], true) {
            return Err(Error::Argument("not a permutation".into()));
        }
    }
    Ok(())
}

/// Line digraph: one node per input arc, arc (a, b) iff head(a) = tail(b) and a != b.
pub fn line_digraph(network: &Network) -> Result<LineDigraph> {
    if network.arcs.is_empty() {
        return Err(Error::Argument("network has no arcs".into()));
    }
    let n_routers = network.nodes.len();
    if let Some(&(u, v)) = network.arcs.iter().find(|&&(u, v)| u >= n_routers || v >= n_routers) {
        return Err(Error::Argument(format!("arc ({u}, {v}) references a missing node")));
    }
    // arcs leaving each router
    let mut outgoing = vec![Vec::new(); n_routers];
    for (idx, &(tail, _)) in network.arcs.iter().enumerate() {
        outgoing[tail].push(idx);
    }
    let mut arcs = Vec::new();
    for (a, &(_, head)) in network.arcs.iter().enumerate() {
        for &b in &outgoing[head] {
            if a != b {
                arcs.push((a, b));
            }
        }
    }
    let ids = network.arcs.iter().map(|&arc| network.arc_name(arc)).collect();
    LineDigraph::new(ids, arcs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyMode {
    Directed,
    Symmetric,
}

/// Boolean "reachable within k hops" mask over line-digraph nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencySpec {
    pub mode: AdjacencyMode,
    pub hops: usize,
    pub include_self_loops: bool,
    n: usize,
    matrix: Vec<bool>,
}

impl AdjacencySpec {
    /// Self-loops only.
    pub fn identity(n: usize) -> Self {
        let mut matrix = vec![false; n * n];
        for i in 0..n {
            matrix[i * n + i] = true;
        }
        Self {
            mode: AdjacencyMode::Directed,
            hops: 1,
            include_self_loops: true,
            n,
            matrix,
        }
    }

    pub fn from_matrix(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("adjacency matrix must be square".into()));
        }
        let include_self_loops = (0..n).all(|i| rows[i][i]);
        Ok(Self {
            mode: AdjacencyMode::Directed,
            hops: 1,
            include_self_loops,
            n,
            matrix: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.matrix[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<bool>> {
        self.matrix.chunks(self.n.max(1)).map(<[bool]>::to_vec).collect()
    }

    /// Column indices `j` with `get(i, j)`, ascending.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.get(i, j)).collect()
    }

    pub fn count(&self) -> usize {
        self.matrix.iter().filter(|&&b| b).count()
    }

    /// Structural error if some node attends to nothing.
    pub fn check_attendable(&self) -> Result<()> {
        match (0..self.n).find(|&i| !self.matrix[i * self.n..(i + 1) * self.n].iter().any(|&b| b)) {
            Some(i) => Err(Error::Structural(format!(
                "node {i} has an empty neighbourhood; attention softmax is undefined (enable self-loops)"
            ))),
            None => Ok(()),
        }
    }

    /// Same mask with node `i` relabelled `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                out.matrix[perm[i] * self.n + perm[j]] = self.get(i, j);
            }
        }
        Ok(out)
    }

    /// Restriction to a subset of nodes, in the given order.
    pub fn induced(&self, nodes: &[usize]) -> Self {
        let m = nodes.len();
        let mut matrix = vec![false; m * m];
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                matrix[a * m + b] = self.get(i, j);
            }
        }
        Self {
            n: m,
            matrix,
            ..self.clone()
        }
    }

    /// `i j` per line for every true entry.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!(
            "# mode={:?} hops={} self_loops={} n={}\n",
            self.mode, self.hops, self.include_self_loops, self.n
        );
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    let _ = writeln!(out, "{i} {j}");
                }
            }
        }
        out
    }

    /// Entrywise `self <= other`.
    pub fn is_subset_of(&self, other: &AdjacencySpec) -> bool {
        self.n == other.n && self.matrix.iter().zip(&other.matrix).all(|(&a, &b)| !a || b)
    }
}

/// Word-packed bitset row.
#[derive(Clone)]
struct BitRow(Vec<u64>);

impl BitRow {
    fn new(n: usize) -> Self {
        Self(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, j: usize) {
        self.0[j / 64] |= 1 << (j % 64);
    }
    fn get(&self, j: usize) -> bool {
        self.0[j / 64] >> (j % 64) & 1 == 1
    }
    fn union_with(&mut self, other: &BitRow) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }
}

/// Reachability within `hops` steps, computed by repeated bitset expansion
/// `R_{k} = R_{k-1} ∪ R_{k-1}·A`; the diagonal is then forced to `self_loops`.
pub fn k_hop_adjacency(
    graph: &LineDigraph,
    hops: usize,
    mode: AdjacencyMode,
    self_loops: bool,
) -> Result<AdjacencySpec> {
    if hops < 1 {
        return Err(Error::Argument("hop count must be at least 1".into()));
    }
    let n = graph.n_nodes();
    let mut step = vec![BitRow::new(n); n];
    for &(a, b) in &graph.arcs {
        step[a].set(b);
        if mode == AdjacencyMode::Symmetric {
            step[b].set(a);
        }
    }
    let mut reach = step.clone();
    for _ in 1..hops.min(n.max(1)) {
        let prev = reach.clone();
        let mut changed = false;
        for (i, row) in reach.iter_mut().enumerate() {
            let before = row.0.clone();
            for j in 0..n {
                if prev[i].get(j) {
                    row.union_with(&step[j]);
                }
            }
            changed |= row.0 != before;
        }
        if !changed {
            break;
        }
    }
    let mut matrix = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            matrix[i * n + j] = if i == j { self_loops } else { reach[i].get(j) };
        }
    }
    Ok(AdjacencySpec {
        mode,
        hops,
        include_self_loops: self_loops,
        n,
        matrix,
    })
}
