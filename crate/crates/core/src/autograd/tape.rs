//! Reverse-mode differentiation over dense row-major matrices.
//!
//! Every value on the tape is an `Array2<f64>`; scalars are 1×1. Fused
//! operations (layer norm, multi-head attention, masked graph attention)
//! carry their own backward rules and cache what those rules need.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Gelu(Var),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Huber(Var, Var, f64),
    MeanAbsDiff(Var, Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Attention(Box<AttentionCache>),
    GraphAttention(Box<GraphAttentionCache>),
}

struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    tq: usize,
    tk: usize,
    shared_kv: bool,
    /// [group][head][i][j] flattened
    probs: Vec<f64>,
}

/// Neighbour lists in CSR form: node `i` attends to `targets[offsets[i]..offsets[i+1]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighbourhoods {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Neighbourhoods {
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        for l in lists {
            targets.extend_from_slice(l);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    fn n_edges(&self) -> usize {
        self.targets.len()
    }
}

struct GraphAttentionCache {
    wh: Var,
    a_src: Var,
    a_dst: Var,
    heads: usize,
    slope: f64,
    nbrs: Arc<Neighbourhoods>,
    /// [group][head][edge] flattened: pre-activation scores and softmax weights
    pre: Vec<f64>,
    alpha: Vec<f64>,
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Records a forward computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Parameter gradients summed over every place the parameter was used.
    pub fn params(&self) -> HashMap<ParamId, Array2<f64>> {
        let mut out: HashMap<ParamId, Array2<f64>> = HashMap::new();
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                match out.get_mut(&pid) {
                    Some(acc) => *acc += g,
                    None => {
                        out.insert(pid, g.clone());
                    }
                }
            }
        }
        out
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a` (m×n) plus the 1×n row `b` broadcast down the rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(b).0, 1, "add_row expects a 1×n row");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    /// `x · w + b` with `b` a 1×n row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(v, Op::Elu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| gelu(x).0);
        self.push(v, Op::Gelu(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, end))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Row-major reinterpretation with the same element count.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("reshape must keep the element count");
        self.push(v, Op::Reshape(a))
    }

    /// Mean Huber loss with knee `delta`.
    pub fn huber(&mut self, pred: Var, target: Var, delta: f64) -> Var {
        assert_eq!(self.shape(pred), self.shape(target), "huber shapes");
        let m = self.value(pred).len() as f64;
        let total: f64 = Zip::from(self.value(pred))
            .and(self.value(target))
            .fold(0.0, |acc, &p, &t| acc + huber_term(p - t, delta));
        self.push(scalar(total / m), Op::Huber(pred, target, delta))
    }

    /// Mean absolute elementwise difference.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mean_abs_diff shapes");
        let m = self.value(a).len() as f64;
        let total: f64 = Zip::from(self.value(a))
            .and(self.value(b))
            .fold(0.0, |acc, &x, &y| acc + (x - y).abs());
        self.push(scalar(total / m), Op::MeanAbsDiff(a, b))
    }

    /// Row-wise layer normalisation with learned gain and bias (1×d each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let out = &(&xhat * self.value(gain)) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Scaled dot-product multi-head attention.
    ///
    /// `q` stacks groups of `tq` query rows; `k` and `v` stack groups of `tk`
    /// rows, one group per query group, or a single group shared by all when
    /// `shared_kv`. Head `h` uses column block `h*dh..(h+1)*dh`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, tq: usize, tk: usize, shared_kv: bool) -> Var {
        let (qr, d) = self.shape(q);
        assert_eq!(d % heads, 0, "model width must divide into heads");
        assert_eq!(qr % tq, 0, "query rows must be whole groups");
        let groups = qr / tq;
        let kv_groups = if shared_kv { 1 } else { groups };
        assert_eq!(self.shape(k), (kv_groups * tk, d), "key shape");
        assert_eq!(self.shape(v), (kv_groups * tk, d), "value shape");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (qs, ks, vs) = (flat(qv), flat(kv), flat(vv));
        let mut out = vec![0.0; qr * d];
        let mut probs = vec![0.0; groups * heads * tq * tk];
        let mut scores = vec![0.0; tk];
        for g in 0..groups {
            let kg = if shared_kv { 0 } else { g };
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..tq {
                    let qo = (g * tq + i) * d + c0;
                    let qi = &qs[qo..qo + dh];
                    let mut max = f64::NEG_INFINITY;
                    for (j, sc) in scores.iter_mut().enumerate() {
                        let ko = (kg * tk + j) * d + c0;
                        *sc = dot(qi, &ks[ko..ko + dh]) * scale;
                        max = max.max(*sc);
                    }
                    let mut z = 0.0;
                    for sc in scores.iter_mut() {
                        *sc = (*sc - max).exp();
                        z += *sc;
                    }
                    let base = ((g * heads + h) * tq + i) * tk;
                    let orow = &mut out[qo..qo + dh];
                    for (j, sc) in scores.iter().enumerate() {
                        let p = sc / z;
                        probs[base + j] = p;
                        let vo = (kg * tk + j) * d + c0;
                        axpy(orow, p, &vs[vo..vo + dh]);
                    }
                }
            }
        }
        let out = Array2::from_shape_vec((qr, d), out).expect("shape");
        self.push(
            out,
            Op::Attention(Box::new(AttentionCache {
                q,
                k,
                v,
                heads,
                tq,
                tk,
                shared_kv,
                probs,
            })),
        )
    }

    /// Masked graph attention over `groups` stacked graphs of `n` nodes.
    ///
    /// `wh` is (groups·n)×(heads·dh); `a_src`/`a_dst` are 1×(heads·dh). Per head:
    /// `e_ij = LeakyReLU(a_src·Wh_i + a_dst·Wh_j)` for j in the neighbourhood
    /// of i, softmax over that neighbourhood, output `Σ_j α_ij Wh_j`.
    /// Non-neighbours get weight exactly zero.
    pub fn graph_attention(&mut self, wh: Var, a_src: Var, a_dst: Var, heads: usize, nbrs: Arc<Neighbourhoods>, slope: f64) -> Var {
        let n = nbrs.n_nodes();
        let (rows, d) = self.shape(wh);
        assert_eq!(d % heads, 0, "feature width must divide into heads");
        assert_eq!(rows % n, 0, "rows must be whole graphs");
        assert_eq!(self.shape(a_src), (1, d));
        assert_eq!(self.shape(a_dst), (1, d));
        let groups = rows / n;
        let dh = d / heads;
        let e = nbrs.n_edges();
        let (whv, asv, adv) = (self.value(wh), self.value(a_src), self.value(a_dst));
        let (whs, ass, ads) = (flat(whv), flat(asv), flat(adv));
        let mut out = vec![0.0; rows * d];
        let mut pre = vec![0.0; groups * heads * e];
        let mut alpha = vec![0.0; groups * heads * e];
        let mut src = vec![0.0; n];
        let mut dst = vec![0.0; n];
        for g in 0..groups {
            for h in 0..heads {
                let c0 = h * dh;
                let a_s = &ass[c0..c0 + dh];
                let a_d = &ads[c0..c0 + dh];
                for i in 0..n {
                    let o = (g * n + i) * d + c0;
                    let row = &whs[o..o + dh];
                    src[i] = dot(row, a_s);
                    dst[i] = dot(row, a_d);
                }
                let base = (g * heads + h) * e;
                for i in 0..n {
                    let (lo, hi) = (nbrs.offsets[i], nbrs.offsets[i + 1]);
                    let mut max = f64::NEG_INFINITY;
                    for (off, &j) in nbrs.targets[lo..hi].iter().enumerate() {
                        let z = src[i] + dst[j];
                        pre[base + lo + off] = z;
                        let sc = if z > 0.0 { z } else { slope * z };
                        alpha[base + lo + off] = sc;
                        max = max.max(sc);
                    }
                    let mut total = 0.0;
                    for a in &mut alpha[base + lo..base + hi] {
                        *a = (*a - max).exp();
                        total += *a;
                    }
                    let oo = (g * n + i) * d + c0;
                    let orow = &mut out[oo..oo + dh];
                    for (off, &j) in nbrs.targets[lo..hi].iter().enumerate() {
                        let a = &mut alpha[base + lo + off];
                        *a /= total;
                        let jo = (g * n + j) * d + c0;
                        axpy(orow, *a, &whs[jo..jo + dh]);
                    }
                }
            }
        }
        let out = Array2::from_shape_vec((rows, d), out).expect("shape");
        self.push(
            out,
            Op::GraphAttention(Box::new(GraphAttentionCache {
                wh,
                a_src,
                a_dst,
                heads,
                slope,
                nbrs,
                pre,
                alpha,
            })),
        )
    }

    /// Attention weights of an attention node as [group][head] rows×cols matrices.
    pub fn attention_weights(&self, v: Var) -> Option<Vec<Vec<Array2<f64>>>> {
        match &self.nodes[v.0].op {
            Op::Attention(c) => {
                let groups = c.probs.len() / (c.heads * c.tq * c.tk);
                Some(
                    (0..groups)
                        .map(|g| {
                            (0..c.heads)
                                .map(|h| {
                                    let base = (g * c.heads + h) * c.tq * c.tk;
                                    Array2::from_shape_vec((c.tq, c.tk), c.probs[base..base + c.tq * c.tk].to_vec())
                                        .expect("cached shape")
                                })
                                .collect()
                        })
                        .collect(),
                )
            }
            Op::GraphAttention(c) => {
                let n = c.nbrs.n_nodes();
                let e = c.nbrs.n_edges();
                let groups = c.alpha.len() / (c.heads * e.max(1));
                Some(
                    (0..groups)
                        .map(|g| {
                            (0..c.heads)
                                .map(|h| {
                                    let base = (g * c.heads + h) * e;
                                    let mut m = Array2::zeros((n, n));
                                    for i in 0..n {
                                        for (off, &j) in c.nbrs.of(i).iter().enumerate() {
                                            m[[i, j]] = c.alpha[base + c.nbrs.offsets[i] + off];
                                        }
                                    }
                                    m
                                })
                                .collect()
                        })
                        .collect(),
                )
            }
            _ => None,
        }
    }

    /// Gradients of the 1×1 node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(pid) => Some((pid, i)),
                _ => None,
            })
            .collect();
        Grads { grads, params }
    }

    fn backprop_node(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let da = g.dot(&self.value(*b).t());
                let db = self.value(*a).t().dot(g);
                accumulate(&mut grads[a.0], da);
                accumulate(&mut grads[b.0], db);
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], -g);
            }
            Op::Mul(a, b) => {
                accumulate(&mut grads[a.0], g * self.value(*b));
                accumulate(&mut grads[b.0], g * self.value(*a));
            }
            Op::AddRow(a, b) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale(a, c) => accumulate(&mut grads[a.0], g * *c),
            Op::Sigmoid(a) => {
                let y = &node.value;
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
                accumulate(&mut grads[a.0], d);
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                accumulate(&mut grads[a.0], d);
            }
            Op::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d *= if x > 0.0 { 1.0 } else { *slope });
                accumulate(&mut grads[a.0], d);
            }
            Op::Elu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .and(&node.value)
                    .for_each(|d, &x, &y| *d *= if x > 0.0 { 1.0 } else { y + 1.0 });
                accumulate(&mut grads[a.0], d);
            }
            Op::Gelu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| *d *= gelu(x).1);
                accumulate(&mut grads[a.0], d);
            }
            Op::SliceCols(a, start, end) => {
                let slot = grads[a.0].get_or_insert_with(|| Array2::zeros(self.shape(*a)));
                let mut part = slot.slice_mut(s![.., *start..*end]);
                part += g;
            }
            Op::SliceRows(a, start, end) => {
                let slot = grads[a.0].get_or_insert_with(|| Array2::zeros(self.shape(*a)));
                let mut part = slot.slice_mut(s![*start..*end, ..]);
                part += g;
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    accumulate(&mut grads[p.0], g.slice(s![.., off..off + w]).to_owned());
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let h = self.shape(*p).0;
                    accumulate(&mut grads[p.0], g.slice(s![off..off + h, ..]).to_owned());
                    off += h;
                }
            }
            Op::Reshape(a) => {
                let flat: Vec<f64> = g.iter().copied().collect();
                accumulate(&mut grads[a.0], Array2::from_shape_vec(self.shape(*a), flat).expect("same size"));
            }
            Op::Huber(p, t, delta) => {
                let gs = g[[0, 0]];
                let m = self.value(*p).len() as f64;
                let mut d = self.value(*p) - self.value(*t);
                d.mapv_inplace(|r| gs * r.clamp(-*delta, *delta) / m);
                accumulate(&mut grads[t.0], -&d);
                accumulate(&mut grads[p.0], d);
            }
            Op::MeanAbsDiff(a, b) => {
                let gs = g[[0, 0]];
                let m = self.value(*a).len() as f64;
                let mut d = self.value(*a) - self.value(*b);
                d.mapv_inplace(|r| gs * sign(r) / m);
                accumulate(&mut grads[b.0], -&d);
                accumulate(&mut grads[a.0], d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                accumulate(&mut grads[gain.0], (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                accumulate(&mut grads[bias.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                let dxhat = g * gv;
                let d = xhat.ncols() as f64;
                let mut dx = Array2::zeros(xhat.dim());
                for r in 0..xhat.nrows() {
                    let dh = dxhat.row(r);
                    let xh = xhat.row(r);
                    let sum_dh = dh.sum();
                    let sum_dhx = dh.dot(&xh);
                    let is = inv_std[r];
                    for c in 0..xhat.ncols() {
                        dx[[r, c]] = is / d * (d * dh[c] - sum_dh - xh[c] * sum_dhx);
                    }
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::Attention(c) => self.backprop_attention(c, g, grads),
            Op::GraphAttention(c) => self.backprop_graph_attention(c, g, grads),
        }
    }

    fn backprop_attention(&self, c: &AttentionCache, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let (qv, kv, vv) = (self.value(c.q), self.value(c.k), self.value(c.v));
        let (qr, d) = qv.dim();
        let groups = qr / c.tq;
        let dh = d / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qs, ks, vs, gs) = (flat(qv), flat(kv), flat(vv), flat(g));
        let mut dq = vec![0.0; qs.len()];
        let mut dk = vec![0.0; ks.len()];
        let mut dv = vec![0.0; vs.len()];
        let mut dp = vec![0.0; c.tk];
        for g_idx in 0..groups {
            let kg = if c.shared_kv { 0 } else { g_idx };
            for h in 0..c.heads {
                let c0 = h * dh;
                for i in 0..c.tq {
                    let base = ((g_idx * c.heads + h) * c.tq + i) * c.tk;
                    let p = &c.probs[base..base + c.tk];
                    let qo = (g_idx * c.tq + i) * d + c0;
                    let go = &gs[qo..qo + dh];
                    let mut weighted = 0.0;
                    for j in 0..c.tk {
                        let vo = (kg * c.tk + j) * d + c0;
                        dp[j] = dot(go, &vs[vo..vo + dh]);
                        weighted += dp[j] * p[j];
                        axpy(&mut dv[vo..vo + dh], p[j], go);
                    }
                    let qi = &qs[qo..qo + dh];
                    for j in 0..c.tk {
                        let ds = p[j] * (dp[j] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let ko = (kg * c.tk + j) * d + c0;
                        axpy(&mut dq[qo..qo + dh], ds, &ks[ko..ko + dh]);
                        axpy(&mut dk[ko..ko + dh], ds, qi);
                    }
                }
            }
        }
        let dq = Array2::from_shape_vec(qv.dim(), dq).expect("shape");
        let dk = Array2::from_shape_vec(kv.dim(), dk).expect("shape");
        let dv = Array2::from_shape_vec(vv.dim(), dv).expect("shape");
        accumulate(&mut grads[c.q.0], dq);
        accumulate(&mut grads[c.k.0], dk);
        accumulate(&mut grads[c.v.0], dv);
    }

    fn backprop_graph_attention(&self, c: &GraphAttentionCache, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let whv = self.value(c.wh);
        let (asv, adv) = (self.value(c.a_src), self.value(c.a_dst));
        let n = c.nbrs.n_nodes();
        let (rows, d) = whv.dim();
        let groups = rows / n;
        let dh = d / c.heads;
        let e = c.nbrs.n_edges();
        let (whs, ass, ads, gs) = (flat(whv), flat(asv), flat(adv), flat(g));
        let mut dwh = vec![0.0; whs.len()];
        let mut das = vec![0.0; d];
        let mut dad = vec![0.0; d];
        let mut dsrc = vec![0.0; n];
        let mut ddst = vec![0.0; n];
        let mut dalpha = Vec::new();
        for g_idx in 0..groups {
            for h in 0..c.heads {
                let c0 = h * dh;
                let base = (g_idx * c.heads + h) * e;
                dsrc.iter_mut().for_each(|v| *v = 0.0);
                ddst.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..n {
                    let (lo, hi) = (c.nbrs.offsets[i], c.nbrs.offsets[i + 1]);
                    let io = (g_idx * n + i) * d + c0;
                    let go = &gs[io..io + dh];
                    dalpha.clear();
                    let mut weighted = 0.0;
                    for (off, &j) in c.nbrs.targets[lo..hi].iter().enumerate() {
                        let a = c.alpha[base + lo + off];
                        let jo = (g_idx * n + j) * d + c0;
                        let da = dot(go, &whs[jo..jo + dh]);
                        weighted += a * da;
                        dalpha.push(da);
                        axpy(&mut dwh[jo..jo + dh], a, go);
                    }
                    for (off, &j) in c.nbrs.targets[lo..hi].iter().enumerate() {
                        let a = c.alpha[base + lo + off];
                        let de = a * (dalpha[off] - weighted);
                        let dz = de * if c.pre[base + lo + off] > 0.0 { 1.0 } else { c.slope };
                        dsrc[i] += dz;
                        ddst[j] += dz;
                    }
                }
                let a_s = &ass[c0..c0 + dh];
                let a_d = &ads[c0..c0 + dh];
                for i in 0..n {
                    let io = (g_idx * n + i) * d + c0;
                    let row = &whs[io..io + dh];
                    axpy(&mut das[c0..c0 + dh], dsrc[i], row);
                    axpy(&mut dad[c0..c0 + dh], ddst[i], row);
                    let drow = &mut dwh[io..io + dh];
                    axpy(drow, dsrc[i], a_s);
                    axpy(drow, ddst[i], a_d);
                }
            }
        }
        let dwh = Array2::from_shape_vec(whv.dim(), dwh).expect("shape");
        let das = Array2::from_shape_vec((1, d), das).expect("shape");
        let dad = Array2::from_shape_vec((1, d), dad).expect("shape");
        accumulate(&mut grads[c.wh.0], dwh);
        accumulate(&mut grads[c.a_src.0], das);
        accumulate(&mut grads[c.a_dst.0], dad);
    }
}

fn flat(a: &Array2<f64>) -> std::borrow::Cow<'_, [f64]> {
    match a.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(a.iter().copied().collect()),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Elementwise Huber term for residual `r`.
pub fn huber_term(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// (value, derivative) of tanh-approximated GELU.
fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const K: f64 = 0.044_715;
    let u = C * (x + K * x * x * x);
    let t = u.tanh();
    let value = 0.5 * x * (1.0 + t);
    let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * K * x * x);
    (value, deriv)
}
