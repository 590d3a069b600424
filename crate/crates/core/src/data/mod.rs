//! Dataset representation, ingestion, synthetic generation, splitting,
//! scaling, windowing and seasonal decomposition.

mod decompose;
mod mts;
mod scaler;
mod split;
mod synth;
mod window;

pub use decompose::{decompose, DecompositionResult, DAY, WEEK};
pub use mts::{NetworkMts, RowSpan, SplitRole, TIMESTAMP_FORMAT};
pub use scaler::{fit_scaler, ScalerState, StandardScaler};
pub use split::{split, LeakageGuard, SplitSpec, Splits};
pub use synth::{synth_generate, synth_generate_with, SynthConfig, SynthOutput, SynthSidecar};
pub use window::{make_windows, WindowBatch};
