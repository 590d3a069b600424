use std::collections::HashMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    AdaptiveMoment,
    PlainSgd,
}

/// Adam or plain SGD over the trainable entries of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: HashMap<ParamId, (Array2<f64>, Array2<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients for frozen parameters are ignored.
    pub fn step(&mut self, store: &mut ParamStore, grads: &HashMap<ParamId, Array2<f64>>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        // deterministic update order
        let mut ids: Vec<&ParamId> = grads.keys().collect();
        ids.sort();
        for &id in ids {
            if !store.is_trainable(id) {
                continue;
            }
            let g = &grads[&id];
            match self.kind {
                OptimizerKind::PlainSgd => {
                    store.get_mut(id).scaled_add(-self.lr, g);
                }
                OptimizerKind::AdaptiveMoment => {
                    let (m, v) = self
                        .moments
                        .entry(id)
                        .or_insert_with(|| (Array2::zeros(g.dim()), Array2::zeros(g.dim())));
                    let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
                    Zip::from(store.get_mut(id))
                        .and(m)
                        .and(v)
                        .and(g)
                        .for_each(|w, m, v, &g| {
                            *m = b1 * *m + (1.0 - b1) * g;
                            *v = b2 * *v + (1.0 - b2) * g * g;
                            *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                        });
                }
            }
        }
    }
}
