use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_s: f64,
}

/// Per-epoch losses of one training run plus the selected epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub arch: String,
    pub config_fingerprint: String,
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the lowest validation loss.
    pub best_epoch: Option<usize>,
    pub final_metrics: BTreeMap<String, f64>,
}

impl RunLog {
    pub fn new(arch: impl Into<String>, config_fingerprint: impl Into<String>) -> Self {
        Self {
            arch: arch.into(),
            config_fingerprint: config_fingerprint.into(),
            ..Self::default()
        }
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_epoch.map(|i| self.epochs[i].val_loss)
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    /// One JSON object per epoch, then a summary line.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for e in &self.epochs {
            let rec = serde_json::json!({
                "arch": self.arch,
                "config": self.config_fingerprint,
                "epoch": e.epoch,
                "train_loss": e.train_loss,
                "val_loss": e.val_loss,
                "wall_s": e.wall_s,
            });
            writeln!(w, "{rec}")?;
        }
        let summary = serde_json::json!({
            "arch": self.arch,
            "config": self.config_fingerprint,
            "best_epoch": self.best_epoch.map(|i| self.epochs[i].epoch),
            "final_metrics": self.final_metrics,
        });
        writeln!(w, "{summary}")
    }
}
