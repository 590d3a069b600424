use std::sync::Arc;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::LstmLayer;
use super::{
    check_inputs, check_targets, flatten_horizon, predict_chunked, time_slice, unflatten_horizon, Architecture,
    Forecaster, LossTerms, Mode,
};
use crate::autograd::{Neighbourhoods, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::AdjacencySpec;

const LEAKY_SLOPE: f64 = 0.2;

/// Multi-head masked graph attention: shared projection `W`, per-head
/// score vectors, ELU on the concatenated heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub w: ParamId,
    pub a_src: ParamId,
    pub a_dst: ParamId,
}

impl GatLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, heads: usize, rng: &mut R) -> Self {
        let w = store.add_glorot(format!("{prefix}.w"), in_dim, out_dim, true, rng);
        let a_src = store.add_glorot(format!("{prefix}.a_src"), 1, out_dim, true, rng);
        let a_dst = store.add_glorot(format!("{prefix}.a_dst"), 1, out_dim, true, rng);
        Self {
            in_dim,
            out_dim,
            heads,
            w,
            a_src,
            a_dst,
        }
    }

    /// `x` stacks whole graphs of `nbrs.n_nodes()` rows.
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var, nbrs: &Arc<Neighbourhoods>) -> Var {
        let w = tape.param(store, self.w);
        let a_s = tape.param(store, self.a_src);
        let a_d = tape.param(store, self.a_dst);
        let wh = tape.matmul(x, w);
        let att = tape.graph_attention(wh, a_s, a_d, self.heads, nbrs.clone(), LEAKY_SLOPE);
        tape.elu(att)
    }
}

pub(crate) fn neighbourhoods(adj: &AdjacencySpec) -> Result<Arc<Neighbourhoods>> {
    adj.check_attendable()?;
    let lists: Vec<Vec<usize>> = (0..adj.n()).map(|i| adj.neighbors(i)).collect();
    Ok(Arc::new(Neighbourhoods::from_lists(&lists)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatOutput {
    /// N × F'
    pub output: Array2<f64>,
    /// One N×N attention matrix per head.
    pub attention: Vec<Array2<f64>>,
}

/// One graph-attention pass over a single N×F feature matrix.
pub fn gat_layer(adjacency: &AdjacencySpec, node_features: &Array2<f64>, store: &ParamStore, layer: &GatLayer) -> Result<GatOutput> {
    let n = adjacency.n();
    if node_features.dim() != (n, layer.in_dim) {
        return Err(Error::shape("node features (N, F)", (n, layer.in_dim), node_features.dim()));
    }
    if layer.heads == 0 || layer.out_dim % layer.heads != 0 {
        return Err(Error::Config(format!(
            "output width {} is not divisible by {} heads",
            layer.out_dim, layer.heads
        )));
    }
    let nbrs = neighbourhoods(adjacency)?;
    let mut tape = Tape::new();
    let x = tape.constant(node_features.clone());
    let w = tape.param(store, layer.w);
    let a_s = tape.param(store, layer.a_src);
    let a_d = tape.param(store, layer.a_dst);
    let wh = tape.matmul(x, w);
    let att = tape.graph_attention(wh, a_s, a_d, layer.heads, nbrs, LEAKY_SLOPE);
    let out = tape.elu(att);
    let attention = tape
        .attention_weights(att)
        .and_then(|mut g| g.pop())
        .expect("graph attention node");
    Ok(GatOutput {
        output: tape.value(out).clone(),
        attention,
    })
}

fn default_heads() -> usize {
    8
}
fn default_lift() -> usize {
    8
}
fn default_gat_out() -> usize {
    16
}
fn default_lstm1() -> usize {
    64
}
fn default_lstm2() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtgatConfig {
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    pub adjacency: AdjacencySpec,
    /// Width F of the per-link scalar lift.
    #[serde(default = "default_lift")]
    pub lift_dim: usize,
    #[serde(default = "default_gat_out")]
    pub gat_out_dim: usize,
    #[serde(default = "default_lstm1")]
    pub lstm1_hidden: usize,
    #[serde(default = "default_lstm2")]
    pub lstm2_hidden: usize,
    pub horizon: usize,
    pub input_length: usize,
}

impl NtgatConfig {
    pub fn new(adjacency: AdjacencySpec, input_length: usize, horizon: usize) -> Self {
        Self {
            n_heads: default_heads(),
            adjacency,
            lift_dim: default_lift(),
            gat_out_dim: default_gat_out(),
            lstm1_hidden: default_lstm1(),
            lstm2_hidden: default_lstm2(),
            horizon,
            input_length,
        }
    }

    pub fn n_series(&self) -> usize {
        self.adjacency.n()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 {
            return Err(Error::Config("n_heads must be at least 1".into()));
        }
        if self.gat_out_dim == 0 || self.gat_out_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "gat_out_dim {} must be a positive multiple of n_heads {}",
                self.gat_out_dim, self.n_heads
            )));
        }
        let sizes = [
            self.lift_dim,
            self.lstm1_hidden,
            self.lstm2_hidden,
            self.horizon,
            self.input_length,
            self.n_series(),
        ];
        if sizes.contains(&0) {
            return Err(Error::Config(format!("NT-GAT sizes must be positive: {self:?}")));
        }
        self.adjacency.check_attendable()
    }
}

/// Per-step graph attention over links, then LSTM → LSTM → dense head.
#[derive(Debug, Clone)]
pub struct NtgatModel {
    pub config: NtgatConfig,
    store: ParamStore,
    nbrs: Arc<Neighbourhoods>,
    pub lift_w: ParamId,
    pub lift_b: ParamId,
    pub gat: GatLayer,
    pub lstm1: LstmLayer,
    pub lstm2: LstmLayer,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl NtgatModel {
    pub fn new(config: NtgatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let nbrs = neighbourhoods(&config.adjacency)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let n = config.n_series();
        let lift_w = store.add_glorot("lift.w", 1, config.lift_dim, true, &mut rng);
        let lift_b = store.add_zeros("lift.b", 1, config.lift_dim, true);
        let gat = GatLayer::new(&mut store, "gat", config.lift_dim, config.gat_out_dim, config.n_heads, &mut rng);
        let lstm1 = LstmLayer::new(&mut store, "lstm1", n * config.gat_out_dim, config.lstm1_hidden, &mut rng);
        let lstm2 = LstmLayer::new(&mut store, "lstm2", config.lstm1_hidden, config.lstm2_hidden, &mut rng);
        let out = config.horizon * n;
        let head_w = store.add_glorot("head.w", config.lstm2_hidden, out, true, &mut rng);
        let head_b = store.add_zeros("head.b", 1, out, true);
        Ok(Self {
            config,
            store,
            nbrs,
            lift_w,
            lift_b,
            gat,
            lstm1,
            lstm2,
            head_w,
            head_b,
        })
    }

    /// Graph-attended features per time step, each S×(N·F').
    fn spatial_steps(&self, tape: &mut Tape, inputs: &Array3<f64>) -> Vec<Var> {
        let (s_count, l, n) = inputs.dim();
        // rows ordered (t, s, n)
        let mut flat = Array2::zeros((l * s_count * n, 1));
        for t in 0..l {
            for si in 0..s_count {
                for ni in 0..n {
                    flat[[(t * s_count + si) * n + ni, 0]] = inputs[[si, t, ni]];
                }
            }
        }
        let x = tape.constant(flat);
        let lw = tape.param(&self.store, self.lift_w);
        let lb = tape.param(&self.store, self.lift_b);
        let lifted = tape.affine(x, lw, lb);
        let g = self.gat.apply(tape, &self.store, lifted, &self.nbrs);
        let fo = self.config.gat_out_dim;
        let per_step = tape.reshape(g, l * s_count, n * fo);
        (0..l)
            .map(|t| tape.slice_rows(per_step, t * s_count, (t + 1) * s_count))
            .collect()
    }

    fn recurrent_head(&self, tape: &mut Tape, steps: &[Var]) -> Var {
        let h1 = self.lstm1.run(tape, &self.store, steps);
        let h2 = self.lstm2.run(tape, &self.store, &h1);
        let last = *h2.last().expect("L >= 1");
        let w = tape.param(&self.store, self.head_w);
        let b = tape.param(&self.store, self.head_b);
        tape.affine(last, w, b)
    }

    pub fn forward_tape(&self, tape: &mut Tape, inputs: &Array3<f64>) -> Result<Var> {
        check_inputs(inputs, self.config.input_length, self.config.n_series())?;
        let steps = self.spatial_steps(tape, inputs);
        Ok(self.recurrent_head(tape, &steps))
    }

    /// The recurrent stack and head fed with the raw inputs, bypassing the
    /// graph stage. Requires `gat_out_dim == 1`.
    pub fn recurrent_only(&self, inputs: &Array3<f64>) -> Result<Array3<f64>> {
        check_inputs(inputs, self.config.input_length, self.config.n_series())?;
        if self.config.gat_out_dim != 1 {
            return Err(Error::Config("recurrent_only needs gat_out_dim = 1".into()));
        }
        let mut tape = Tape::new();
        let steps: Vec<Var> = (0..self.config.input_length)
            .map(|t| tape.constant(time_slice(inputs, t)))
            .collect();
        let out = self.recurrent_head(&mut tape, &steps);
        Ok(unflatten_horizon(tape.value(out), self.config.horizon, self.config.n_series()))
    }

    pub fn forward(&self, inputs: &Array3<f64>) -> Result<Array3<f64>> {
        let mut tape = Tape::new();
        let out = self.forward_tape(&mut tape, inputs)?;
        Ok(unflatten_horizon(tape.value(out), self.config.horizon, self.config.n_series()))
    }

    /// The same model with link `i` relabelled `perm[i]`: adjacency and the
    /// node-indexed blocks of the first LSTM and the head are moved together.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let adjacency = self.config.adjacency.permuted(perm)?;
        let mut out = self.clone();
        out.config.adjacency = adjacency;
        out.nbrs = neighbourhoods(&out.config.adjacency)?;
        let n = self.config.n_series();
        let fo = self.config.gat_out_dim;
        let src = self.store.get(self.lstm1.w_ih);
        let dst = out.store.get_mut(self.lstm1.w_ih);
        for (i, &p) in perm.iter().enumerate() {
            for f in 0..fo {
                dst.row_mut(p * fo + f).assign(&src.row(i * fo + f));
            }
        }
        for id in [self.head_w, self.head_b] {
            let src = self.store.get(id);
            let dst = out.store.get_mut(id);
            for h in 0..self.config.horizon {
                for (i, &p) in perm.iter().enumerate() {
                    dst.column_mut(h * n + p).assign(&src.column(h * n + i));
                }
            }
        }
        Ok(out)
    }
}

impl Forecaster for NtgatModel {
    fn architecture(&self) -> Architecture {
        Architecture::Ntgat
    }
    fn input_length(&self) -> usize {
        self.config.input_length
    }
    fn horizon(&self) -> usize {
        self.config.horizon
    }
    fn n_series(&self) -> usize {
        self.config.n_series()
    }
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serialises")
    }

    fn loss(&self, tape: &mut Tape, inputs: &Array3<f64>, targets: &Array3<f64>, _mode: Mode<'_>, huber_delta: f64) -> Result<LossTerms> {
        check_targets(targets, inputs.dim().0, self.config.horizon, self.config.n_series())?;
        let pred = self.forward_tape(tape, inputs)?;
        let t = tape.constant(flatten_horizon(targets));
        let supervised = tape.huber(pred, t, huber_delta);
        Ok(LossTerms {
            total: supervised,
            supervised,
            feature: None,
            output: None,
        })
    }

    fn predict(&self, inputs: &Array3<f64>) -> Result<Array3<f64>> {
        check_inputs(inputs, self.config.input_length, self.config.n_series())?;
        predict_chunked(inputs, self.config.horizon, self.config.n_series(), |c| self.forward(c))
    }
}

#[cfg(test)]
mod tests {
    use ndarray::{array, s};

    use super::*;
    use crate::autograd::check::check_param_gradients;
    use crate::graph::{k_hop_adjacency, AdjacencyMode, LineDigraph};

    fn layer_store(in_dim: usize, out_dim: usize, heads: usize, seed: u64) -> (ParamStore, GatLayer) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = GatLayer::new(&mut store, "gat", in_dim, out_dim, heads, &mut rng);
        (store, layer)
    }

    fn features(n: usize, f: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, f), |(i, j)| ((i * 3 + j * 5) % 7) as f64 / 3.0 - 1.0)
    }

    #[test]
    fn identity_adjacency_attends_to_self() {
        let (store, layer) = layer_store(3, 4, 2, 1);
        let out = gat_layer(&AdjacencySpec::identity(5), &features(5, 3), &store, &layer).unwrap();
        for head in &out.attention {
            assert_eq!(head, &Array2::<f64>::eye(5));
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_mask_is_exact() {
        let g = LineDigraph::new((0..6).map(|i| i.to_string()).collect(), vec![(0, 1), (1, 2), (2, 3), (4, 5), (5, 0)]).unwrap();
        let adj = k_hop_adjacency(&g, 2, AdjacencyMode::Directed, true).unwrap();
        let (store, layer) = layer_store(2, 8, 4, 2);
        let out = gat_layer(&adj, &features(6, 2), &store, &layer).unwrap();
        assert_eq!(out.attention.len(), 4);
        for head in &out.attention {
            for i in 0..6 {
                assert!((head.row(i).sum() - 1.0).abs() < 1e-6);
                for j in 0..6 {
                    if !adj.get(i, j) {
                        assert_eq!(head[[i, j]], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_neighbourhood_is_structural_error() {
        let adj = AdjacencySpec::from_matrix(&[vec![true, true], vec![false, false]]).unwrap();
        let (store, layer) = layer_store(1, 2, 1, 3);
        let err = gat_layer(&adj, &features(2, 1), &store, &layer).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn three_node_layer_matches_dense_oracle() {
        let adj = AdjacencySpec::from_matrix(&[
            vec![true, true, false],
            vec![false, true, true],
            vec![true, false, true],
        ])
        .unwrap();
        let mut store = ParamStore::new();
        let w_val = array![[0.5, -0.2], [0.1, 0.4]];
        let as_val = array![[0.3, -0.7]];
        let ad_val = array![[-0.6, 0.2]];
        let layer = GatLayer {
            in_dim: 2,
            out_dim: 2,
            heads: 1,
            w: store.add("w", w_val.clone(), true),
            a_src: store.add("as", as_val.clone(), true),
            a_dst: store.add("ad", ad_val.clone(), true),
        };
        let x = array![[1.0, 2.0], [-1.0, 0.5], [0.3, -0.4]];
        let got = gat_layer(&adj, &x, &store, &layer).unwrap();

        // dense oracle: full score matrix, -inf outside the mask, softmax, ELU
        let wh = x.dot(&w_val);
        let mut expected = Array2::<f64>::zeros((3, 2));
        for i in 0..3 {
            let mut scores = [f64::NEG_INFINITY; 3];
            for (j, sc) in scores.iter_mut().enumerate() {
                if adj.get(i, j) {
                    let z = (as_val.row(0).dot(&wh.row(i))) + (ad_val.row(0).dot(&wh.row(j)));
                    *sc = if z > 0.0 { z } else { 0.2 * z };
                }
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..3 {
                let a = exps[j] / z;
                assert!((got.attention[0][[i, j]] - a).abs() < 1e-12);
                let whj = wh.row(j).to_owned();
                let mut row = expected.row_mut(i);
                row.scaled_add(a, &whj);
            }
        }
        let elu = expected.mapv(|v| if v > 0.0 { v } else { v.exp() - 1.0 });
        for (a, b) in got.output.iter().zip(elu.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn path_adjacency(n: usize, hops: usize) -> AdjacencySpec {
        let g = LineDigraph::new((0..n).map(|i| i.to_string()).collect(), (0..n - 1).map(|i| (i, i + 1)).collect()).unwrap();
        k_hop_adjacency(&g, hops, AdjacencyMode::Symmetric, true).unwrap()
    }

    fn small_cfg(adj: AdjacencySpec, l: usize, h: usize) -> NtgatConfig {
        NtgatConfig {
            n_heads: 2,
            adjacency: adj,
            lift_dim: 3,
            gat_out_dim: 4,
            lstm1_hidden: 5,
            lstm2_hidden: 6,
            horizon: h,
            input_length: l,
        }
    }

    // no exact zeros: with a zero lift bias they sit on the LeakyReLU kink
    fn inputs(s_count: usize, l: usize, n: usize) -> Array3<f64> {
        Array3::from_shape_fn((s_count, l, n), |(a, b, c)| ((a * 7 + b * 3 + c * 5) % 11) as f64 / 5.0 - 0.83)
    }

    #[test]
    fn identity_graph_stage_reduces_to_recurrent_stack() {
        let cfg = NtgatConfig {
            n_heads: 1,
            lift_dim: 1,
            gat_out_dim: 1,
            ..small_cfg(AdjacencySpec::identity(3), 4, 2)
        };
        let mut m = NtgatModel::new(cfg, 4).unwrap();
        let (lw, lb, w) = (m.lift_w, m.lift_b, m.gat.w);
        m.params_mut().get_mut(lw).fill(1.0);
        m.params_mut().get_mut(lb).fill(0.0);
        m.params_mut().get_mut(w).fill(1.0);
        // ELU is the identity on positive inputs
        let x = inputs(3, 4, 3).mapv(|v| v.abs() + 0.1);
        let a = m.predict(&x).unwrap();
        let b = m.recurrent_only(&x).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn relabelling_links_permutes_outputs() {
        let adj = path_adjacency(4, 2);
        let m = NtgatModel::new(small_cfg(adj, 5, 3), 5).unwrap();
        let perm = [2, 0, 3, 1];
        let pm = m.permuted(&perm).unwrap();
        let x = inputs(2, 5, 4);
        let mut px = Array3::zeros(x.dim());
        for (i, &p) in perm.iter().enumerate() {
            px.slice_mut(s![.., .., p]).assign(&x.slice(s![.., .., i]));
        }
        let y = m.predict(&x).unwrap();
        let py = pm.predict(&px).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for (a, b) in y.slice(s![.., .., i]).iter().zip(py.slice(s![.., .., p]).iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn samples_are_independent() {
        let m = NtgatModel::new(small_cfg(path_adjacency(3, 1), 4, 2), 6).unwrap();
        let x = inputs(4, 4, 3);
        let all = m.predict(&x).unwrap();
        for si in 0..4 {
            let one = m.predict(&x.slice(s![si..si + 1, .., ..]).to_owned()).unwrap();
            for (a, b) in one.iter().zip(all.slice(s![si, .., ..]).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = NtgatConfig {
            gat_out_dim: 5,
            ..small_cfg(AdjacencySpec::identity(2), 3, 1)
        };
        assert!(matches!(NtgatModel::new(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = NtgatModel::new(small_cfg(path_adjacency(3, 1), 4, 2), 7).unwrap();
        let x = inputs(2, 4, 3);
        let y = Array3::from_shape_fn((2, 2, 3), |(a, b, c)| ((a + 2 * b + c) % 3) as f64 - 1.0);
        let ids = m.params().trainable_ids();
        let report = check_param_gradients(m.params(), &ids, None, 1e-5, 1e-4, |store| {
            let mut probe = m.clone();
            probe.params_mut().load_values(store).unwrap();
            let mut tape = Tape::new();
            let loss = probe.loss(&mut tape, &x, &y, Mode::Infer, 1.0).unwrap().total;
            (tape, loss)
        });
        assert!(report.passed(), "{:#?}", report.mismatches);
    }
}
