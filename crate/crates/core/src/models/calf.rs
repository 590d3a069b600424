use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pca::principal_word_embeddings;
use super::{
    check_inputs, check_targets, from_series_major, predict_chunked, series_major, Architecture, ForecastOutput,
    Forecaster, LossTerms, Mode,
};
use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

const VOCAB_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Attention projections that may carry a low-rank adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoraTarget {
    Query,
    Key,
    Value,
    Output,
}

impl LoraTarget {
    fn tag(self) -> &'static str {
        match self {
            LoraTarget::Query => "q",
            LoraTarget::Key => "k",
            LoraTarget::Value => "v",
            LoraTarget::Output => "o",
        }
    }
}

fn d_model() -> usize {
    32
}
fn n_layers() -> usize {
    2
}
fn n_heads() -> usize {
    4
}
fn vocab_size() -> usize {
    256
}
fn n_principal() -> usize {
    16
}
fn lora_rank() -> usize {
    4
}
fn lora_alpha() -> f64 {
    8.0
}
fn lora_targets() -> Vec<LoraTarget> {
    vec![LoraTarget::Query, LoraTarget::Value]
}
fn lambda_feature() -> f64 {
    0.01
}
fn lambda_output() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalfConfig {
    #[serde(default = "d_model")]
    pub d_model: usize,
    #[serde(default = "n_layers")]
    pub n_layers: usize,
    #[serde(default = "n_heads")]
    pub n_heads: usize,
    /// Rows of the seeded vocabulary; ignored when a vocabulary is supplied.
    #[serde(default = "vocab_size")]
    pub vocab_size: usize,
    /// Seed of the frozen backbone and seeded vocabulary, shared by every
    /// model built from this config.
    #[serde(default)]
    pub backbone_seed: u64,
    #[serde(default = "n_principal")]
    pub n_principal: usize,
    #[serde(default = "lora_rank")]
    pub lora_rank: usize,
    #[serde(default = "lora_alpha")]
    pub lora_alpha: f64,
    #[serde(default = "lora_targets")]
    pub lora_targets: Vec<LoraTarget>,
    #[serde(default = "lambda_feature")]
    pub lambda_feature: f64,
    #[serde(default = "lambda_output")]
    pub lambda_output: f64,
    #[serde(default)]
    pub horizon: usize,
    #[serde(default)]
    pub input_length: usize,
    #[serde(default)]
    pub n_series: usize,
}

impl CalfConfig {
    pub fn new(input_length: usize, horizon: usize, n_series: usize) -> Self {
        Self {
            d_model: d_model(),
            n_layers: n_layers(),
            n_heads: n_heads(),
            vocab_size: vocab_size(),
            backbone_seed: 0,
            n_principal: n_principal(),
            lora_rank: lora_rank(),
            lora_alpha: lora_alpha(),
            lora_targets: lora_targets(),
            lambda_feature: lambda_feature(),
            lambda_output: lambda_output(),
            horizon,
            input_length,
            n_series,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.d_model, self.n_layers, self.n_heads, self.horizon, self.input_length, self.n_series];
        if sizes.contains(&0) {
            return Err(Error::Config(format!("CALF sizes must be positive: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.lora_rank == 0 {
            return Err(Error::Config("lora_rank must be at least 1".into()));
        }
        if !(self.lambda_feature >= 0.0 && self.lambda_output >= 0.0 && self.lora_alpha > 0.0) {
            return Err(Error::Config("loss weights must be >= 0 and lora_alpha > 0".into()));
        }
        if self.n_principal == 0 || self.n_principal > self.vocab_size.min(self.d_model) {
            return Err(Error::Config(format!(
                "n_principal {} outside 1..={}",
                self.n_principal,
                self.vocab_size.min(self.d_model)
            )));
        }
        Ok(())
    }

    fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Lora {
    a: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Block {
    ln1: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln2: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    /// Indexed by `LoraTarget as usize`.
    lora: [Option<Lora>; 4],
}

/// Tape handles of one CALF forward pass.
#[derive(Debug, Clone)]
pub struct CalfForward {
    /// (S·N) × H, row `s·N + n`.
    pub pred_temporal: Var,
    pub hidden_temporal: Vec<Var>,
    /// Textual-branch prediction and hidden states; present in training mode.
    pub textual: Option<(Var, Vec<Var>)>,
}

/// Channel-as-token transformer with a frozen backbone, LoRA adapters and a
/// train-time textual branch built from principal word embeddings.
#[derive(Debug, Clone)]
pub struct CalfModel {
    pub config: CalfConfig,
    store: ParamStore,
    in_w: ParamId,
    in_b: ParamId,
    blocks: Vec<Block>,
    ln_f: (ParamId, ParamId),
    head_w: ParamId,
    head_b: ParamId,
    principal: ParamId,
    cq: ParamId,
    ck: ParamId,
    cv: ParamId,
}

impl CalfModel {
    /// Seeded vocabulary of `vocab_size × d_model`.
    pub fn new(config: CalfConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.backbone_seed ^ VOCAB_STREAM);
        let mut scratch = ParamStore::new();
        let id = scratch.add_normal("vocab", config.vocab_size, config.d_model, 1.0, false, &mut rng);
        let vocab = scratch.get(id).clone();
        Self::with_vocab(config, &vocab, seed)
    }

    pub fn with_vocab(mut config: CalfConfig, vocab: &Array2<f64>, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.nrows();
        config.validate()?;
        if vocab.ncols() != config.d_model {
            return Err(Error::shape("vocabulary embedding (V, d_model)", ("V", config.d_model), vocab.dim()));
        }
        let principal_vals = principal_word_embeddings(vocab, config.n_principal)?;
        let d = config.d_model;
        let mut store = ParamStore::new();

        // frozen backbone: depends only on backbone_seed
        let mut brng = ChaCha8Rng::seed_from_u64(config.backbone_seed);
        let ones = || Array2::from_elem((1, d), 1.0);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("backbone.l{l}");
            let ln1 = (store.add(format!("{p}.ln1.g"), ones(), false), store.add_zeros(format!("{p}.ln1.b"), 1, d, false));
            let wq = store.add_glorot(format!("{p}.wq"), d, d, false, &mut brng);
            let wk = store.add_glorot(format!("{p}.wk"), d, d, false, &mut brng);
            let wv = store.add_glorot(format!("{p}.wv"), d, d, false, &mut brng);
            let wo = store.add_glorot(format!("{p}.wo"), d, d, false, &mut brng);
            let ln2 = (store.add(format!("{p}.ln2.g"), ones(), false), store.add_zeros(format!("{p}.ln2.b"), 1, d, false));
            let w1 = store.add_glorot(format!("{p}.mlp.w1"), d, 4 * d, false, &mut brng);
            let b1 = store.add_zeros(format!("{p}.mlp.b1"), 1, 4 * d, false);
            let w2 = store.add_glorot(format!("{p}.mlp.w2"), 4 * d, d, false, &mut brng);
            let b2 = store.add_zeros(format!("{p}.mlp.b2"), 1, d, false);
            blocks.push(Block {
                ln1,
                wq,
                wk,
                wv,
                wo,
                ln2,
                w1,
                b1,
                w2,
                b2,
                lora: [None; 4],
            });
        }
        let ln_f = (store.add("backbone.ln_f.g", ones(), false), store.add_zeros("backbone.ln_f.b", 1, d, false));
        let principal = store.add("text.principal", principal_vals, false);

        // trainable surface
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_w = store.add_glorot("input.w", config.input_length, d, true, &mut rng);
        let in_b = store.add_zeros("input.b", 1, d, true);
        let r = config.lora_rank;
        let mut targets = config.lora_targets.clone();
        targets.sort();
        targets.dedup();
        for (l, block) in blocks.iter_mut().enumerate() {
            for &t in &targets {
                let p = format!("lora.l{l}.{}", t.tag());
                let a = store.add_normal(format!("{p}.a"), d, r, 1.0 / (d as f64).sqrt(), true, &mut rng);
                let b = store.add_zeros(format!("{p}.b"), r, d, true);
                block.lora[t as usize] = Some(Lora { a, b });
            }
        }
        let cq = store.add_glorot("text.cross.q", d, d, true, &mut rng);
        let ck = store.add_glorot("text.cross.k", d, d, true, &mut rng);
        let cv = store.add_glorot("text.cross.v", d, d, true, &mut rng);
        let head_w = store.add_glorot("head.w", d, config.horizon, true, &mut rng);
        let head_b = store.add_zeros("head.b", 1, config.horizon, true);
        Ok(Self {
            config,
            store,
            in_w,
            in_b,
            blocks,
            ln_f,
            head_w,
            head_b,
            principal,
            cq,
            ck,
            cv,
        })
    }

    /// Frozen parameters: backbone weights and principal embeddings.
    pub fn backbone_params(&self) -> Vec<ParamId> {
        self.store.ids().filter(|&id| !self.store.is_trainable(id)).collect()
    }

    /// Ids of the adapter matrices (A, B) for every layer and target.
    pub fn lora_params(&self) -> Vec<(ParamId, ParamId)> {
        self.blocks
            .iter()
            .flat_map(|b| b.lora.iter().flatten().map(|l| (l.a, l.b)))
            .collect()
    }

    pub fn principal_embeddings(&self) -> &Array2<f64> {
        self.store.get(self.principal)
    }

    fn projection(&self, tape: &mut Tape, x: Var, w: ParamId, lora: Option<Lora>, adapt: bool) -> Var {
        let wv = tape.param(&self.store, w);
        let base = tape.matmul(x, wv);
        match lora {
            Some(Lora { a, b }) if adapt => {
                let av = tape.param(&self.store, a);
                let bv = tape.param(&self.store, b);
                let xa = tape.matmul(x, av);
                let xab = tape.matmul(xa, bv);
                let scaled = tape.scale(xab, self.config.lora_scale());
                tape.add(base, scaled)
            }
            _ => base,
        }
    }

    /// Backbone over `groups` of `n` tokens; returns (final normed, per-layer hidden).
    fn backbone(&self, tape: &mut Tape, mut x: Var, n: usize, adapt: bool) -> (Var, Vec<Var>) {
        let mut hidden = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let g1 = tape.param(&self.store, b.ln1.0);
            let b1 = tape.param(&self.store, b.ln1.1);
            let a = tape.layer_norm(x, g1, b1);
            let q = self.projection(tape, a, b.wq, b.lora[LoraTarget::Query as usize], adapt);
            let k = self.projection(tape, a, b.wk, b.lora[LoraTarget::Key as usize], adapt);
            let v = self.projection(tape, a, b.wv, b.lora[LoraTarget::Value as usize], adapt);
            let att = tape.attention(q, k, v, self.config.n_heads, n, n, false);
            let o = self.projection(tape, att, b.wo, b.lora[LoraTarget::Output as usize], adapt);
            x = tape.add(x, o);
            let g2 = tape.param(&self.store, b.ln2.0);
            let bb2 = tape.param(&self.store, b.ln2.1);
            let m = tape.layer_norm(x, g2, bb2);
            let w1 = tape.param(&self.store, b.w1);
            let bias1 = tape.param(&self.store, b.b1);
            let w2 = tape.param(&self.store, b.w2);
            let bias2 = tape.param(&self.store, b.b2);
            let h = tape.affine(m, w1, bias1);
            let h = tape.gelu(h);
            let f = tape.affine(h, w2, bias2);
            x = tape.add(x, f);
            hidden.push(x);
        }
        let g = tape.param(&self.store, self.ln_f.0);
        let bf = tape.param(&self.store, self.ln_f.1);
        (tape.layer_norm(x, g, bf), hidden)
    }

    fn head(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(&self.store, self.head_w);
        let b = tape.param(&self.store, self.head_b);
        tape.affine(x, w, b)
    }

    /// Temporal tokens, (S·N) × d_model.
    fn tokens(&self, tape: &mut Tape, inputs: &Array3<f64>) -> Var {
        let x = tape.constant(series_major(inputs));
        let w = tape.param(&self.store, self.in_w);
        let b = tape.param(&self.store, self.in_b);
        tape.affine(x, w, b)
    }

    /// Aligned text tokens: temporal tokens query the principal embeddings.
    fn aligned_text(&self, tape: &mut Tape, tokens: Var) -> Var {
        let e = tape.param(&self.store, self.principal);
        let cq = tape.param(&self.store, self.cq);
        let ck = tape.param(&self.store, self.ck);
        let cv = tape.param(&self.store, self.cv);
        let q = tape.matmul(tokens, cq);
        let k = tape.matmul(e, ck);
        let v = tape.matmul(e, cv);
        tape.attention(q, k, v, self.config.n_heads, self.config.n_series, self.config.n_principal, true)
    }

    pub fn forward_tape(&self, tape: &mut Tape, inputs: &Array3<f64>, mode: &Mode<'_>) -> Result<CalfForward> {
        check_inputs(inputs, self.config.input_length, self.config.n_series)?;
        let n = self.config.n_series;
        let tokens = self.tokens(tape, inputs);
        let (out_t, hidden_temporal) = self.backbone(tape, tokens, n, true);
        let pred_temporal = self.head(tape, out_t);
        let textual = if mode.is_train() {
            let text = self.aligned_text(tape, tokens);
            let (out_x, hidden_x) = self.backbone(tape, text, n, false);
            Some((self.head(tape, out_x), hidden_x))
        } else {
            None
        };
        Ok(CalfForward {
            pred_temporal,
            hidden_temporal,
            textual,
        })
    }

    /// Array-level forward. Hidden states are only available in training mode.
    pub fn forward(&self, inputs: &Array3<f64>, mode: Mode<'_>, with_hidden: bool) -> Result<ForecastOutput> {
        if with_hidden && !mode.is_train() {
            return Err(Error::Contract(
                "branch hidden states exist only in training mode; inference runs the temporal branch alone".into(),
            ));
        }
        let mut tape = Tape::new();
        let f = self.forward_tape(&mut tape, inputs, &mode)?;
        let predictions = from_series_major(tape.value(f.pred_temporal), self.config.n_series);
        let branch_hidden = match (&f.textual, with_hidden) {
            (Some((_, hx)), true) => Some((
                f.hidden_temporal.iter().map(|&v| tape.value(v).clone()).collect(),
                hx.iter().map(|&v| tape.value(v).clone()).collect(),
            )),
            _ => None,
        };
        Ok(ForecastOutput {
            predictions,
            branch_hidden,
        })
    }

    /// Aligned text tokens for `inputs`, (S·N) × d_model.
    pub fn aligned_text_tokens(&self, inputs: &Array3<f64>) -> Result<Array2<f64>> {
        check_inputs(inputs, self.config.input_length, self.config.n_series)?;
        let mut tape = Tape::new();
        let tokens = self.tokens(&mut tape, inputs);
        let text = self.aligned_text(&mut tape, tokens);
        Ok(tape.value(text).clone())
    }

    /// Value projection `E · C_v` of the principal embeddings.
    pub fn principal_values(&self) -> Array2<f64> {
        self.store.get(self.principal).dot(self.store.get(self.cv))
    }
}

/// Supervised Huber loss plus the feature and output consistency terms.
///
/// `feature` is the mean over layers of the mean absolute difference between
/// branch hidden states; `output` is the mean absolute difference of the two
/// predictions.
#[allow(clippy::too_many_arguments)]
pub fn calf_losses(
    tape: &mut Tape,
    pred_temporal: Var,
    pred_textual: Var,
    hidden_temporal: &[Var],
    hidden_textual: &[Var],
    targets: Var,
    huber_delta: f64,
    lambda_feature: f64,
    lambda_output: f64,
) -> Result<LossTerms> {
    if hidden_temporal.len() != hidden_textual.len() || hidden_temporal.is_empty() {
        return Err(Error::Shape(format!(
            "hidden state lists differ in layer count: {} vs {}",
            hidden_temporal.len(),
            hidden_textual.len()
        )));
    }
    for (l, (&a, &b)) in hidden_temporal.iter().zip(hidden_textual).enumerate() {
        if tape.shape(a) != tape.shape(b) {
            return Err(Error::shape(&format!("hidden state of layer {l}"), tape.shape(a), tape.shape(b)));
        }
    }
    for (what, v) in [("textual prediction", pred_textual), ("targets", targets)] {
        if tape.shape(v) != tape.shape(pred_temporal) {
            return Err(Error::shape(what, tape.shape(pred_temporal), tape.shape(v)));
        }
    }
    let supervised = tape.huber(pred_temporal, targets, huber_delta);
    let mut feature = tape.mean_abs_diff(hidden_temporal[0], hidden_textual[0]);
    for (&a, &b) in hidden_temporal.iter().zip(hidden_textual).skip(1) {
        let d = tape.mean_abs_diff(a, b);
        feature = tape.add(feature, d);
    }
    let feature = tape.scale(feature, 1.0 / hidden_temporal.len() as f64);
    let output = tape.mean_abs_diff(pred_temporal, pred_textual);
    let wf = tape.scale(feature, lambda_feature);
    let wo = tape.scale(output, lambda_output);
    let partial = tape.add(supervised, wf);
    let total = tape.add(partial, wo);
    Ok(LossTerms {
        total,
        supervised,
        feature: Some(feature),
        output: Some(output),
    })
}

impl Forecaster for CalfModel {
    fn architecture(&self) -> Architecture {
        Architecture::Calf
    }
    fn input_length(&self) -> usize {
        self.config.input_length
    }
    fn horizon(&self) -> usize {
        self.config.horizon
    }
    fn n_series(&self) -> usize {
        self.config.n_series
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

    fn loss(&self, tape: &mut Tape, inputs: &Array3<f64>, targets: &Array3<f64>, mode: Mode<'_>, huber_delta: f64) -> Result<LossTerms> {
        check_targets(targets, inputs.dim().0, self.config.horizon, self.config.n_series)?;
        let f = self.forward_tape(tape, inputs, &mode)?;
        let t = tape.constant(series_major(targets));
        match f.textual {
            Some((pred_x, hidden_x)) => calf_losses(
                tape,
                f.pred_temporal,
                pred_x,
                &f.hidden_temporal,
                &hidden_x,
                t,
                huber_delta,
                self.config.lambda_feature,
                self.config.lambda_output,
            ),
            None => {
                let supervised = tape.huber(f.pred_temporal, t, huber_delta);
                Ok(LossTerms {
                    total: supervised,
                    supervised,
                    feature: None,
                    output: None,
                })
            }
        }
    }

    fn predict(&self, inputs: &Array3<f64>) -> Result<Array3<f64>> {
        check_inputs(inputs, self.config.input_length, self.config.n_series)?;
        predict_chunked(inputs, self.config.horizon, self.config.n_series, |c| {
            Ok(self.forward(c, Mode::Infer, false)?.predictions)
        })
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::autograd::check::check_param_gradients;

    fn small_cfg(n: usize, l: usize, h: usize) -> CalfConfig {
        CalfConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            vocab_size: 20,
            n_principal: 3,
            lora_rank: 2,
            ..CalfConfig::new(l, h, n)
        }
    }

    fn inputs(s_count: usize, l: usize, n: usize) -> Array3<f64> {
        Array3::from_shape_fn((s_count, l, n), |(a, b, c)| ((a * 7 + b * 3 + c * 5) % 11) as f64 / 5.0 - 1.0)
    }

    fn randomise_lora(m: &mut CalfModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 0.3).unwrap();
        for (_, b) in m.lora_params() {
            m.params_mut().get_mut(b).mapv_inplace(|_| dist.sample(&mut rng));
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let m = CalfModel::new(small_cfg(3, 6, 2), 1).unwrap();
        let x = inputs(4, 6, 3);
        let a = m.predict(&x).unwrap();
        assert_eq!(a.dim(), (4, 2, 3));
        assert_eq!(a, m.predict(&x).unwrap());
    }

    #[test]
    fn zero_initialised_adapters_leave_backbone_output_unchanged() {
        let m = CalfModel::new(small_cfg(3, 6, 2), 2).unwrap();
        let x = inputs(2, 6, 3);
        let with = m.predict(&x).unwrap();
        let mut tape = Tape::new();
        let tokens = m.tokens(&mut tape, &x);
        let (out, _) = m.backbone(&mut tape, tokens, 3, false);
        let pred = m.head(&mut tape, out);
        let without = from_series_major(tape.value(pred), 3);
        assert_eq!(with, without);

        let mut adapted = m.clone();
        randomise_lora(&mut adapted, 3);
        assert_ne!(adapted.predict(&x).unwrap(), with);
    }

    #[test]
    fn single_principal_embedding_gives_its_value_projection() {
        let cfg = CalfConfig {
            n_principal: 1,
            ..small_cfg(3, 5, 1)
        };
        let m = CalfModel::new(cfg, 4).unwrap();
        let text = m.aligned_text_tokens(&inputs(2, 5, 3)).unwrap();
        let value = m.principal_values();
        for row in text.rows() {
            for (a, b) in row.iter().zip(value.row(0).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hidden_states_in_inference_are_a_contract_error() {
        let m = CalfModel::new(small_cfg(2, 4, 1), 5).unwrap();
        let err = m.forward(&inputs(1, 4, 2), Mode::Infer, true).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = m.forward(&inputs(1, 4, 2), Mode::Train(&mut rng), true).unwrap();
        let (ht, hx) = out.branch_hidden.unwrap();
        assert_eq!(ht.len(), 2);
        assert_eq!(hx.len(), 2);
    }

    #[test]
    fn config_rules() {
        let bad = CalfConfig {
            n_principal: 9,
            ..small_cfg(2, 4, 1)
        };
        assert!(matches!(CalfModel::new(bad, 0), Err(Error::Config(_))));
        let bad = CalfConfig {
            lora_rank: 0,
            ..small_cfg(2, 4, 1)
        };
        assert!(matches!(CalfModel::new(bad, 0), Err(Error::Config(_))));
        let vocab = Array2::zeros((10, 5));
        assert!(matches!(CalfModel::with_vocab(small_cfg(2, 4, 1), &vocab, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn backbone_is_shared_across_model_seeds() {
        let a = CalfModel::new(small_cfg(2, 4, 1), 1).unwrap();
        let b = CalfModel::new(small_cfg(2, 4, 1), 2).unwrap();
        for id in a.backbone_params() {
            assert_eq!(a.params().get(id), b.params().get(id));
        }
        assert_ne!(a.params().get(a.in_w), b.params().get(b.in_w));
    }

    fn loss_value(lf: f64, lo: f64, pt: Array2<f64>, px: Array2<f64>, ht: &[Array2<f64>], hx: &[Array2<f64>], y: Array2<f64>) -> (f64, f64, f64, f64) {
        let mut t = Tape::new();
        let pt = t.constant(pt);
        let px = t.constant(px);
        let ht: Vec<Var> = ht.iter().map(|h| t.constant(h.clone())).collect();
        let hx: Vec<Var> = hx.iter().map(|h| t.constant(h.clone())).collect();
        let y = t.constant(y);
        let terms = calf_losses(&mut t, pt, px, &ht, &hx, y, 1.0, lf, lo).unwrap();
        (
            t.scalar_value(terms.total),
            t.scalar_value(terms.supervised),
            t.scalar_value(terms.feature.unwrap()),
            t.scalar_value(terms.output.unwrap()),
        )
    }

    #[test]
    fn identical_branches_and_perfect_fit_cost_nothing() {
        let p = array![[1.0, 2.0], [3.0, 4.0]];
        let h = vec![array![[0.5, -0.5]], array![[1.0, 0.0]]];
        let (total, ..) = loss_value(0.3, 2.0, p.clone(), p.clone(), &h, &h, p);
        assert_eq!(total, 0.0);
    }

    #[test]
    fn zero_weights_reduce_to_huber() {
        let pt = array![[0.5, 3.0]];
        let px = array![[1.0, -1.0]];
        let ht = vec![array![[1.0, 2.0]]];
        let hx = vec![array![[0.0, 0.0]]];
        let (total, sup, ..) = loss_value(0.0, 0.0, pt, px, &ht, &hx, array![[0.0, 1.0]]);
        // residuals 0.5 and 2.0 with delta 1
        assert!((sup - 0.8125).abs() < 1e-12);
        assert_eq!(total, sup);
    }

    #[test]
    fn three_terms_add_up_by_hand() {
        let pt = array![[0.5, 3.0]];
        let px = array![[1.0, 2.0]];
        let y = array![[0.0, 1.0]];
        let ht = vec![array![[1.0, 2.0]], array![[0.0, 0.0]]];
        let hx = vec![array![[0.0, 0.0]], array![[0.0, 4.0]]];
        let (total, sup, feat, out) = loss_value(0.1, 2.0, pt, px, &ht, &hx, y);
        // huber: (0.125 + 1.5) / 2
        assert!((sup - 0.8125).abs() < 1e-12);
        // layer 1: (1 + 2) / 2 = 1.5; layer 2: (0 + 4) / 2 = 2; mean 1.75
        assert!((feat - 1.75).abs() < 1e-12);
        // (0.5 + 1.0) / 2
        assert!((out - 0.75).abs() < 1e-12);
        assert!((total - (0.8125 + 0.1 * 1.75 + 2.0 * 0.75)).abs() < 1e-12);
    }

    #[test]
    fn mismatched_layer_counts_are_shape_errors() {
        let mut t = Tape::new();
        let p = t.constant(array![[1.0]]);
        let h = t.constant(array![[1.0]]);
        let err = calf_losses(&mut t, p, p, &[h, h], &[h], p, 1.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn gradients_of_full_objective_match_finite_differences() {
        let mut m = CalfModel::new(small_cfg(3, 6, 2), 6).unwrap();
        randomise_lora(&mut m, 7);
        let x = inputs(2, 6, 3);
        let y = Array3::from_shape_fn((2, 2, 3), |(a, b, c)| ((a + 2 * b + c) % 3) as f64 - 1.0);
        let ids = m.params().trainable_ids();
        let report = check_param_gradients(m.params(), &ids, None, 1e-5, 1e-4, |store| {
            let mut probe = m.clone();
            probe.params_mut().load_values(store).unwrap();
            let mut tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let loss = probe.loss(&mut tape, &x, &y, Mode::Train(&mut rng), 1.0).unwrap().total;
            (tape, loss)
        });
        assert!(report.passed(), "{:#?}", report.mismatches);
    }
}
