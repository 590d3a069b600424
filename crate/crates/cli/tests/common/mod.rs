#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Tiny pipeline: 8 links, 600 hours, two horizons, one sequence length.
pub const SMALL: &str = r#"
seed = 7

[data.synth]
n_links = 8
n_hours = 600
n_latent_clusters = 2

[grid]
horizons = [1, 6]
sequence_lengths = [24]
lstm_hidden_units = [8]
lstm_dropout = [0.0]
ntgat_heads = [2]
ntgat_hops = [1]

[models.ntgat]
lift_dim = 4
gat_out_dim = 8
lstm1_hidden = 8
lstm2_hidden = 8

[models.calf]
d_model = 8
n_layers = 1
n_heads = 2
vocab_size = 32
n_principal = 4

[train]
max_epochs = 2
early_stop_patience = 1

[cluster]
k = [1, 2]
"#;

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

pub fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nettemporal"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env("NETTEMPORAL_LOG", "warn")
        .output()
        .unwrap()
}

pub fn run_ok(config: &Path, out: &Path, args: &[&str]) {
    let o = run(config, out, args);
    assert!(
        o.status.success(),
        "{args:?} exited {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
