use std::fs;
use std::path::{Path, PathBuf};

use nettemporal::data::{SplitSpec, SynthConfig};
use nettemporal::models::{Architecture, CalfConfig};
use nettemporal::training::{ArchSettings, ClusterSpec, GridSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn all_archs() -> Vec<Architecture> {
    Architecture::ALL.to_vec()
}

/// Generator settings; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    #[serde(default = "synth_links")]
    pub n_links: usize,
    #[serde(default = "synth_hours")]
    pub n_hours: usize,
    #[serde(default = "synth_clusters")]
    pub n_latent_clusters: usize,
    #[serde(default = "synth_noise")]
    pub noise_level: f64,
    #[serde(default = "synth_persistence")]
    pub latent_persistence: f64,
}

fn synth_links() -> usize {
    SynthConfig::default().n_links
}
fn synth_hours() -> usize {
    SynthConfig::default().n_hours
}
fn synth_clusters() -> usize {
    SynthConfig::default().n_latent_clusters
}
fn synth_noise() -> f64 {
    SynthConfig::default().noise_level
}
fn synth_persistence() -> f64 {
    SynthConfig::default().latent_persistence
}

impl SynthSection {
    pub fn to_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_links: self.n_links,
            n_hours: self.n_hours,
            n_latent_clusters: self.n_latent_clusters,
            seed,
            noise_level: self.noise_level,
            latent_persistence: self.latent_persistence,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Dataset CSV; defaults to `<out>/data.csv`.
    pub path: Option<PathBuf>,
    pub synth: Option<SynthSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "all_archs")]
    pub archs: Vec<Architecture>,
    #[serde(default)]
    pub models: ArchSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub cluster: ClusterSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: default_out(),
            data: DataSection::default(),
            split: SplitSpec::default(),
            grid: GridSpec::default(),
            archs: all_archs(),
            models: ArchSettings::default(),
            train: TrainConfig::default(),
            cluster: ClusterSpec::default(),
        }
    }
}

fn field(path: &str, e: impl std::fmt::Display) -> Failure {
    Failure::config(format!("{path}: {e}"))
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::missing(format!("config file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let de = toml::Deserializer::parse(text).map_err(|e| Failure::config(format!("config: {e}")))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().to_string();
            if path == "." {
                Failure::config(format!("config: {msg}"))
            } else {
                Failure::config(format!("{path}: {msg}"))
            }
        })
    }

    /// Applies command-line overrides, then checks every section.
    pub fn finish(mut self, seed: Option<u64>, out: Option<PathBuf>, arch: Option<Architecture>) -> Result<Self, Failure> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out = o;
        }
        if let Some(a) = arch {
            self.archs = vec![a];
        }
        if self.train.seed != 0 && self.train.seed != self.seed {
            return Err(field("train.seed", "set the seed at top level or with --seed"));
        }
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.split.validate().map_err(|e| field("split", e))?;
        self.grid.validate().map_err(|e| field("grid", e))?;
        self.train.validate().map_err(|e| field("train", e))?;
        self.cluster.validate().map_err(|e| field("cluster", e))?;
        if self.archs.is_empty() {
            return Err(field("archs", "select at least one architecture"));
        }
        let calf = CalfConfig {
            input_length: 1,
            horizon: 1,
            n_series: 1,
            ..self.models.calf.clone()
        };
        calf.validate().map_err(|e| field("models.calf", e))?;
        let g = &self.models.ntgat;
        if [g.lift_dim, g.gat_out_dim, g.lstm1_hidden, g.lstm2_hidden].contains(&0) {
            return Err(field("models.ntgat", "widths must be positive"));
        }
        if let Some(&h) = self.grid.ntgat_heads.iter().find(|&&h| g.gat_out_dim % h != 0) {
            return Err(field(
                "grid.ntgat_heads",
                format!("{h} heads do not divide models.ntgat.gat_out_dim = {}", g.gat_out_dim),
            ));
        }
        if let Some(s) = &self.data.synth {
            if s.n_links < 2 || s.n_latent_clusters == 0 || s.n_latent_clusters > s.n_links {
                return Err(field("data.synth", "need n_links >= 2 and 1 <= n_latent_clusters <= n_links"));
            }
        }
        Ok(())
    }

    pub fn data_path(&self) -> PathBuf {
        self.data.path.clone().unwrap_or_else(|| self.out.join("data.csv"))
    }

    /// Sidecar next to the dataset: `data.csv` → `data.sidecar.json`.
    pub fn sidecar_path(&self) -> PathBuf {
        self.data_path().with_extension("sidecar.json")
    }

    /// SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex(&Sha256::digest(&bytes))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
