use std::time::Instant;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::runlog::{EpochRecord, RunLog};
use crate::autograd::{huber_term, Optimizer, Tape};
use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::models::{
    AnyModel, CalfConfig, CalfModel, Forecaster, LstmConfig, LstmModel, Mode, NtgatConfig, NtgatModel,
};

/// Mean Huber loss: `0.5 r²` inside the knee, `δ(|r| − δ/2)` outside.
pub fn huber_loss(pred: &[f64], target: &[f64], delta: f64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("huber pred vs target", target.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::Argument("huber loss of zero elements".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Argument(format!("huber delta {delta} must be positive")));
    }
    let total: f64 = pred.iter().zip(target).map(|(p, t)| huber_term(p - t, delta)).sum();
    Ok(total / pred.len() as f64)
}

fn huber_arrays(pred: &Array3<f64>, target: &Array3<f64>, delta: f64) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::shape("huber pred vs target", target.dim(), pred.dim()));
    }
    let p: Vec<f64> = pred.iter().copied().collect();
    let t: Vec<f64> = target.iter().copied().collect();
    huber_loss(&p, &t, delta)
}

/// Tracks the best validation loss; a strict decrease counts as improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_index: Option<usize>,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_index: None,
            since_best: 0,
        }
    }

    /// Records epoch `index`; returns true when it is the new best.
    pub fn observe(&mut self, index: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_index = Some(index);
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_index(&self) -> Option<usize> {
        self.best_index
    }
}

/// Short hex digest of a serialisable configuration.
pub fn config_fingerprint<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configs serialise");
    let digest = Sha256::digest(&bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Validation Huber loss in inference mode.
pub fn validation_loss<M: Forecaster + ?Sized>(model: &M, val: &WindowBatch, delta: f64) -> Result<f64> {
    let pred = model.predict(&val.inputs)?;
    huber_arrays(&pred, &val.targets, delta)
}

fn check_batches<M: Forecaster + ?Sized>(model: &M, train: &WindowBatch, val: &WindowBatch) -> Result<()> {
    for (name, b) in [("training", train), ("validation", val)] {
        if b.n_samples() == 0 {
            return Err(Error::Config(format!("{name} windows are empty")));
        }
        let geometry = (b.input_length(), b.horizon(), b.n_series());
        let expected = (model.input_length(), model.horizon(), model.n_series());
        if geometry != expected {
            return Err(Error::shape(&format!("{name} windows (L, H, N)"), expected, geometry));
        }
    }
    Ok(())
}

/// Mini-batch training with early stopping; leaves the best-validation
/// parameters in `model`.
pub fn fit<M: Forecaster + ?Sized>(
    model: &mut M,
    cfg: &TrainConfig,
    train: &WindowBatch,
    val: &WindowBatch,
    fingerprint: &str,
) -> Result<RunLog> {
    cfg.validate()?;
    check_batches(model, train, val)?;
    let mut log = RunLog::new(model.architecture().as_str(), fingerprint);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut best = model.params().clone();
    let mut order: Vec<usize> = (0..train.n_samples()).collect();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = train.gather(batch);
            let mut tape = Tape::new();
            let terms = model.loss(&mut tape, &x, &y, Mode::Train(&mut rng), cfg.huber_delta)?;
            let loss = tape.scalar_value(terms.total);
            if !loss.is_finite() {
                return Err(diverged(epoch, "training loss", loss, log));
            }
            let grads = tape.backward(terms.total).params();
            opt.step(model.params_mut(), &grads);
            total += loss * batch.len() as f64;
        }
        let train_loss = total / train.n_samples() as f64;
        let val_loss = validation_loss(model, val, cfg.huber_delta)?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, "validation loss", val_loss, log));
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            wall_s: started.elapsed().as_secs_f64(),
        });
        log::debug!("{} epoch {epoch}: train {train_loss:.5} val {val_loss:.5}", log.arch);
        if stopper.observe(log.epochs.len() - 1, val_loss) {
            best = model.params().clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    log.best_epoch = stopper.best_index();
    model.params_mut().load_values(&best)?;
    Ok(log)
}

fn diverged(epoch: usize, what: &str, value: f64, log: RunLog) -> Error {
    Error::Training {
        epoch,
        message: format!("{what} became {value}"),
        log: Box::new(log),
    }
}

/// Single-model architecture configurations accepted by [`train_model`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "arch", rename_all = "kebab-case")]
pub enum ModelConfig {
    Lstm(LstmConfig),
    Ntgat(NtgatConfig),
    Calf(CalfConfig),
}

impl ModelConfig {
    pub fn build(&self, seed: u64) -> Result<AnyModel> {
        Ok(match self {
            ModelConfig::Lstm(c) => AnyModel::Lstm(LstmModel::new(c.clone(), seed)?),
            ModelConfig::Ntgat(c) => AnyModel::Ntgat(NtgatModel::new(c.clone(), seed)?),
            ModelConfig::Calf(c) => AnyModel::Calf(CalfModel::new(c.clone(), seed)?),
        })
    }
}

/// Builds a model seeded with `cfg.seed` and trains it.
pub fn train_model(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train: &WindowBatch,
    val: &WindowBatch,
) -> Result<(AnyModel, RunLog)> {
    let fingerprint = config_fingerprint(&(model_cfg, cfg));
    let mut model = model_cfg.build(cfg.seed)?;
    let log = match &mut model {
        AnyModel::Lstm(m) => fit(m, cfg, train, val, &fingerprint)?,
        AnyModel::Ntgat(m) => fit(m, cfg, train, val, &fingerprint)?,
        AnyModel::Calf(m) => fit(m, cfg, train, val, &fingerprint)?,
        AnyModel::ClusterCalf(_) => unreachable!("built from a single-model config"),
    };
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, NetworkMts};

    #[test]
    fn huber_examples() {
        assert_eq!(huber_loss(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap(), 0.0);
        let d = 0.7;
        assert!((huber_loss(&[d], &[0.0], d).unwrap() - 0.5 * d * d).abs() < 1e-15);
        assert!((huber_loss(&[0.5, 2.0], &[0.0, 0.0], 1.0).unwrap() - 0.8125).abs() < 1e-15);
        assert!(matches!(huber_loss(&[1.0], &[1.0, 2.0], 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn huber_gradient_matches_differences_off_the_knee() {
        let delta = 1.0;
        for r in [0.3, -0.4, delta - 1e-3, delta + 1e-3, -delta - 1e-3, 2.5] {
            let mut tape = Tape::new();
            let p = tape.constant(ndarray::arr2(&[[r]]));
            let t = tape.constant(ndarray::arr2(&[[0.0]]));
            let l = tape.huber(p, t, delta);
            let g = tape.backward(l).of(p).unwrap()[[0, 0]];
            let eps = 1e-7;
            let num = (huber_term(r + eps, delta) - huber_term(r - eps, delta)) / (2.0 * eps);
            assert!((g - num).abs() <= 1e-6 * num.abs().max(1.0), "r={r}: {g} vs {num}");
        }
    }

    #[test]
    fn stopper_stops_two_epochs_after_the_minimum() {
        let curve = [5.0, 4.0, 3.0, 3.5, 4.0, 4.5, 5.0];
        let mut s = EarlyStopper::new(2);
        let mut stopped_at = None;
        for (i, &v) in curve.iter().enumerate() {
            s.observe(i, v);
            if s.should_stop() {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(5));
        assert_eq!(s.best_index(), Some(2));
    }

    fn seasonal(t: usize, n: usize) -> NetworkMts {
        let values = ndarray::Array2::from_shape_fn((t, n), |(i, j)| {
            let phase = j as f64 * 0.7;
            1.0 + (2.0 * std::f64::consts::PI * i as f64 / 24.0 + phase).sin() * 0.8
        });
        NetworkMts::hourly_from(
            chrono::DateTime::from_timestamp(0, 0).unwrap(),
            (0..n).map(|j| format!("a{j}->b{j}")).collect(),
            values,
        )
        .unwrap()
    }

    fn tiny_lstm() -> ModelConfig {
        ModelConfig::Lstm(LstmConfig {
            input_length: 12,
            hidden_units: 8,
            dropout_rate: 0.0,
            horizon: 2,
            n_series: 2,
        })
    }

    #[test]
    fn tiny_lstm_learns_a_seasonal_signal() {
        let data = seasonal(400, 2);
        let train = make_windows(&data.slice_rows(0..300).unwrap(), 12, 2).unwrap();
        let val = make_windows(&data.slice_rows(300..400).unwrap(), 12, 2).unwrap();
        let cfg = TrainConfig {
            max_epochs: 20,
            early_stop_patience: 19,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (model, log) = train_model(&tiny_lstm(), &cfg, &train, &val).unwrap();
        let first = log.epochs[0].val_loss;
        let last = log.epochs.last().unwrap().val_loss;
        assert!(last <= 0.8 * first, "{first} -> {last}");
        // restored parameters reproduce the best recorded validation loss
        let restored = validation_loss(&model_as_dyn(&model), &val, 1.0).unwrap();
        assert_eq!(Some(restored), log.best_val_loss());
    }

    fn model_as_dyn(m: &AnyModel) -> LstmModel {
        match m {
            AnyModel::Lstm(x) => x.clone(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn same_seed_same_log() {
        let data = seasonal(200, 2);
        let train = make_windows(&data.slice_rows(0..150).unwrap(), 12, 2).unwrap();
        let val = make_windows(&data.slice_rows(150..200).unwrap(), 12, 2).unwrap();
        let cfg = TrainConfig {
            max_epochs: 4,
            early_stop_patience: 2,
            ..TrainConfig::default()
        };
        let (_, a) = train_model(&tiny_lstm(), &cfg, &train, &val).unwrap();
        let (_, b) = train_model(&tiny_lstm(), &cfg, &train, &val).unwrap();
        assert_eq!(a.train_losses(), b.train_losses());
        assert_eq!(a.val_losses(), b.val_losses());
        assert_eq!(a.config_fingerprint, b.config_fingerprint);
    }

    /// One parameter whose objective is NaN.
    struct Poisoned(crate::autograd::ParamStore, crate::autograd::ParamId);

    impl Forecaster for Poisoned {
        fn architecture(&self) -> crate::models::Architecture {
            crate::models::Architecture::Lstm
        }
        fn input_length(&self) -> usize {
            12
        }
        fn horizon(&self) -> usize {
            2
        }
        fn n_series(&self) -> usize {
            2
        }
        fn params(&self) -> &crate::autograd::ParamStore {
            &self.0
        }
        fn params_mut(&mut self) -> &mut crate::autograd::ParamStore {
            &mut self.0
        }
        fn config_json(&self) -> serde_json::Value {
            serde_json::Value::Null
        }
        fn loss(&self, tape: &mut Tape, _: &Array3<f64>, _: &Array3<f64>, _: Mode<'_>, delta: f64) -> Result<crate::models::LossTerms> {
            let p = tape.param(&self.0, self.1);
            let bad = tape.scale(p, f64::NAN);
            let total = tape.huber(bad, p, delta);
            Ok(crate::models::LossTerms {
                total,
                supervised: total,
                feature: None,
                output: None,
            })
        }
        fn predict(&self, inputs: &Array3<f64>) -> Result<Array3<f64>> {
            Ok(Array3::zeros((inputs.dim().0, 2, 2)))
        }
    }

    #[test]
    fn divergence_carries_the_log() {
        let data = seasonal(120, 2);
        let train = make_windows(&data.slice_rows(0..90).unwrap(), 12, 2).unwrap();
        let val = make_windows(&data.slice_rows(90..120).unwrap(), 12, 2).unwrap();
        let mut store = crate::autograd::ParamStore::new();
        let id = store.add("p", ndarray::Array2::ones((1, 1)), true);
        let mut model = Poisoned(store, id);
        let cfg = TrainConfig {
            max_epochs: 3,
            early_stop_patience: 2,
            ..TrainConfig::default()
        };
        match fit(&mut model, &cfg, &train, &val, "x") {
            Err(Error::Training { epoch, log, .. }) => {
                assert_eq!(epoch, 1);
                assert_eq!(log.arch, "lstm");
                assert!(log.epochs.is_empty());
            }
            other => panic!("expected a training error, got {other:?}"),
        }
    }
}
