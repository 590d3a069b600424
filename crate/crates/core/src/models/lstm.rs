use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_inputs, check_targets, dropout_mask, flatten_horizon, predict_chunked, time_slice, unflatten_horizon,
    Architecture, Forecaster, LossTerms, Mode,
};
use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// One recurrent layer; gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let w_ih = store.add_glorot(format!("{prefix}.w_ih"), input_dim, 4 * hidden, true, rng);
        let w_hh = store.add_glorot(format!("{prefix}.w_hh"), hidden, 4 * hidden, true, rng);
        let mut b = Array2::zeros((1, 4 * hidden));
        // forget gate starts open
        b.slice_mut(ndarray::s![0, hidden..2 * hidden]).fill(1.0);
        let bias = store.add(format!("{prefix}.bias"), b, true);
        Self {
            input_dim,
            hidden,
            w_ih,
            w_hh,
            bias,
        }
    }

    /// Runs the recurrence from zero state; returns the hidden state after every step.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, steps: &[Var]) -> Vec<Var> {
        let s_count = tape.shape(steps[0]).0;
        let w_ih = tape.param(store, self.w_ih);
        let w_hh = tape.param(store, self.w_hh);
        let b = tape.param(store, self.bias);
        let hd = self.hidden;
        let mut h = tape.constant(Array2::zeros((s_count, hd)));
        let mut c = tape.constant(Array2::zeros((s_count, hd)));
        let mut out = Vec::with_capacity(steps.len());
        for &x in steps {
            let xw = tape.matmul(x, w_ih);
            let hw = tape.matmul(h, w_hh);
            let pre = tape.add(xw, hw);
            let gates = tape.add_row(pre, b);
            let i_pre = tape.slice_cols(gates, 0, hd);
            let f_pre = tape.slice_cols(gates, hd, 2 * hd);
            let g_pre = tape.slice_cols(gates, 2 * hd, 3 * hd);
            let o_pre = tape.slice_cols(gates, 3 * hd, 4 * hd);
            let i = tape.sigmoid(i_pre);
            let f = tape.sigmoid(f_pre);
            let g = tape.tanh(g_pre);
            let o = tape.sigmoid(o_pre);
            let fc = tape.mul(f, c);
            let ig = tape.mul(i, g);
            c = tape.add(fc, ig);
            let tc = tape.tanh(c);
            h = tape.mul(o, tc);
            out.push(h);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmConfig {
    pub input_length: usize,
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub horizon: usize,
    pub n_series: usize,
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_length == 0 || self.hidden_units == 0 || self.horizon == 0 || self.n_series == 0 {
            return Err(Error::Config(format!("LSTM sizes must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

/// LSTM → dropout → dense head emitting all H·N outputs at once.
#[derive(Debug, Clone)]
pub struct LstmModel {
    pub config: LstmConfig,
    store: ParamStore,
    pub layer: LstmLayer,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl LstmModel {
    pub fn new(config: LstmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layer = LstmLayer::new(&mut store, "lstm", config.n_series, config.hidden_units, &mut rng);
        let out = config.horizon * config.n_series;
        let head_w = store.add_glorot("head.w", config.hidden_units, out, true, &mut rng);
        let head_b = store.add_zeros("head.b", 1, out, true);
        Ok(Self {
            config,
            store,
            layer,
            head_w,
            head_b,
        })
    }

    /// S×(H·N) prediction node.
    pub fn forward_tape(&self, tape: &mut Tape, inputs: &Array3<f64>, mode: Mode<'_>) -> Result<Var> {
        let cfg = &self.config;
        check_inputs(inputs, cfg.input_length, cfg.n_series)?;
        let steps: Vec<Var> = (0..cfg.input_length)
            .map(|t| tape.constant(time_slice(inputs, t)))
            .collect();
        let hs = self.layer.run(tape, &self.store, &steps);
        let mut last = *hs.last().expect("L >= 1");
        if let Mode::Train(rng) = mode {
            if cfg.dropout_rate > 0.0 {
                let mask = tape.constant(dropout_mask(rng, inputs.dim().0, cfg.hidden_units, cfg.dropout_rate));
                last = tape.mul(last, mask);
            }
        }
        let w = tape.param(&self.store, self.head_w);
        let b = tape.param(&self.store, self.head_b);
        Ok(tape.affine(last, w, b))
    }

    pub fn forward(&self, inputs: &Array3<f64>, mode: Mode<'_>) -> Result<Array3<f64>> {
        let mut tape = Tape::new();
        let out = self.forward_tape(&mut tape, inputs, mode)?;
        Ok(unflatten_horizon(tape.value(out), self.config.horizon, self.config.n_series))
    }
}

impl Forecaster for LstmModel {
    fn architecture(&self) -> Architecture {
        Architecture::Lstm
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
        let pred = self.forward_tape(tape, inputs, mode)?;
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
        check_inputs(inputs, self.config.input_length, self.config.n_series)?;
        predict_chunked(inputs, self.config.horizon, self.config.n_series, |chunk| {
            self.forward(chunk, Mode::Infer)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::check::check_param_gradients;
    use crate::autograd::sigmoid;

    fn cfg(n: usize, l: usize, h: usize, hidden: usize, dropout: f64) -> LstmConfig {
        LstmConfig {
            input_length: l,
            hidden_units: hidden,
            dropout_rate: dropout,
            horizon: h,
            n_series: n,
        }
    }

    #[test]
    fn zero_input_zero_head_gives_zero() {
        let mut m = LstmModel::new(cfg(3, 4, 2, 5, 0.0), 1).unwrap();
        let (w, b) = (m.head_w, m.head_b);
        m.params_mut().get_mut(w).fill(0.0);
        m.params_mut().get_mut(b).fill(0.0);
        let out = m.predict(&Array3::zeros((2, 4, 3))).unwrap();
        assert_eq!(out.dim(), (2, 2, 3));
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let m = LstmModel::new(cfg(2, 5, 3, 4, 0.5), 2).unwrap();
        let x = Array3::from_shape_fn((3, 5, 2), |(a, b, c)| ((a + 2 * b + 3 * c) % 7) as f64 / 7.0);
        assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn single_step_matches_gate_arithmetic() {
        let mut m = LstmModel::new(cfg(1, 1, 1, 1, 0.0), 3).unwrap();
        let l = m.layer;
        let set = |m: &mut LstmModel, id, vals: &[f64]| {
            let p = m.params_mut().get_mut(id);
            for (dst, v) in p.iter_mut().zip(vals) {
                *dst = *v;
            }
        };
        // gate order i, f, g, o
        set(&mut m, l.w_ih, &[0.5, -0.3, 0.8, 0.2]);
        set(&mut m, l.w_hh, &[0.1, 0.1, 0.1, 0.1]);
        set(&mut m, l.bias, &[0.1, 0.2, -0.1, 0.05]);
        let (hw, hb) = (m.head_w, m.head_b);
        set(&mut m, hw, &[2.0]);
        set(&mut m, hb, &[0.5]);
        let x = 0.7;
        let out = m.predict(&Array3::from_elem((1, 1, 1), x)).unwrap();

        let i = sigmoid(0.5 * x + 0.1);
        let g = (0.8 * x - 0.1f64).tanh();
        let o = sigmoid(0.2 * x + 0.05);
        let c = i * g; // previous cell is zero
        let h = o * c.tanh();
        assert!((out[[0, 0, 0]] - (2.0 * h + 0.5)).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let m = LstmModel::new(cfg(2, 4, 1, 3, 0.0), 4).unwrap();
        let err = m.predict(&Array3::zeros((1, 3, 2))).unwrap_err();
        assert!(err.to_string().contains("batch inputs"));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = LstmModel::new(cfg(3, 5, 2, 4, 0.0), 5).unwrap();
        let x = Array3::from_shape_fn((2, 5, 3), |(a, b, c)| ((a * 5 + b * 3 + c) % 11) as f64 / 5.0 - 1.0);
        let y = Array3::from_shape_fn((2, 2, 3), |(a, b, c)| ((a + b + c) % 3) as f64 - 1.0);
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
