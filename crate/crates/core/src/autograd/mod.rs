//! Minimal reverse-mode autodiff used by every model in the crate.

pub mod check;
mod optim;
mod params;
mod tape;

pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tape::{huber_term, sigmoid, Grads, Neighbourhoods, Tape, Var};
