//! Mini-batch training, grid search and cluster-wise training.

mod cluster;
mod config;
mod data;
mod fit;
mod grid;
mod runlog;

pub use cluster::{train_cluster_calf, ClusterRunLog};
pub use config::{ArchSettings, ClusterSpec, GridSpec, NtgatSettings, TrainConfig};
pub use data::{PreparedData, PreparedWindows, MIN_TRAIN_WINDOWS};
pub use fit::{config_fingerprint, fit, huber_loss, train_model, validation_loss, EarlyStopper, ModelConfig};
pub use grid::{grid_csv, grid_points, grid_search, run_point, GridOutcome, GridPoint, GridResults, GridRow, PointModel};
pub use runlog::{EpochRecord, RunLog};
