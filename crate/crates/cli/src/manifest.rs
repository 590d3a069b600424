use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, PipelineConfig};
use crate::failure::Failure;

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub nettemporal: &'static str,
    pub cli: &'static str,
    pub checkpoint_format: u32,
}

/// `<out>/<command>.manifest.json`
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub outputs: Vec<OutputEntry>,
}

/// Writes files under the output directory and remembers them for the manifest.
pub struct Outputs {
    root: PathBuf,
    command: String,
    entries: Vec<OutputEntry>,
}

impl Outputs {
    pub fn new(root: &Path, command: &str) -> Result<Self, Failure> {
        fs::create_dir_all(root).map_err(|e| Failure::runtime(format!("creating {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            entries: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` under the output root.
    pub fn write(&mut self, rel: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<PathBuf, Failure> {
        let full = self.root.join(rel.as_ref());
        self.write_at(full, bytes)
    }

    /// Writes `bytes` to `full` as given, possibly outside the output root.
    pub fn write_at(&mut self, full: PathBuf, bytes: impl AsRef<[u8]>) -> Result<PathBuf, Failure> {
        if let Some(dir) = full.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("creating {}: {e}", dir.display())))?;
        }
        let bytes = bytes.as_ref();
        fs::write(&full, bytes).map_err(|e| Failure::runtime(format!("writing {}: {e}", full.display())))?;
        self.record(&full, bytes);
        Ok(full)
    }

    /// Registers a file some other writer already produced.
    pub fn register(&mut self, full: &Path) -> Result<(), Failure> {
        let bytes = fs::read(full).map_err(|e| Failure::runtime(format!("reading {}: {e}", full.display())))?;
        self.record(full, &bytes);
        Ok(())
    }

    fn record(&mut self, full: &Path, bytes: &[u8]) {
        let shown = full.strip_prefix(&self.root).unwrap_or(full);
        let path = shown.to_string_lossy().replace('\\', "/");
        self.entries.retain(|e| e.path != path);
        self.entries.push(OutputEntry {
            path,
            sha256: hex(&Sha256::digest(bytes)),
        });
    }

    pub fn finish(mut self, cfg: &PipelineConfig) -> Result<PathBuf, Failure> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: self.command.clone(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            versions: Versions {
                nettemporal: nettemporal::VERSION,
                cli: env!("CARGO_PKG_VERSION"),
                checkpoint_format: nettemporal::models::CHECKPOINT_VERSION,
            },
            outputs: self.entries,
        };
        let path = self.root.join(format!("{}.manifest.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .map_err(|e| Failure::runtime(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }
}
