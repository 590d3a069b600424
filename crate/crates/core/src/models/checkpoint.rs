use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::calf::{CalfConfig, CalfModel};
use super::cluster_calf::ClusterCalfModel;
use super::gat::{NtgatConfig, NtgatModel};
use super::lstm::{LstmConfig, LstmModel};
use super::{Architecture, Forecaster};
use crate::autograd::ParamStore;
use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub architecture: Architecture,
    pub config: serde_json::Value,
    pub seed: u64,
    /// `name -> (rows, cols)`; cluster models prefix names with `c{k}/`.
    pub param_shapes: BTreeMap<String, (usize, usize)>,
}

/// Manifest plus parameter values; cluster models carry one store per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<ClusterAssignment>,
    pub params: Vec<ParamStore>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(f))?;
        if ckpt.manifest.version != CHECKPOINT_VERSION {
            return Err(Error::Integrity(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ckpt.manifest.version
            )));
        }
        Ok(ckpt)
    }
}

/// Any trained forecaster, as stored in checkpoints.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Lstm(LstmModel),
    Ntgat(NtgatModel),
    Calf(CalfModel),
    ClusterCalf(ClusterCalfModel),
}

impl AnyModel {
    pub fn architecture(&self) -> Architecture {
        match self {
            AnyModel::Lstm(_) => Architecture::Lstm,
            AnyModel::Ntgat(_) => Architecture::Ntgat,
            AnyModel::Calf(_) => Architecture::Calf,
            AnyModel::ClusterCalf(_) => Architecture::ClusterCalf,
        }
    }

    fn single(&self) -> Option<&dyn Forecaster> {
        match self {
            AnyModel::Lstm(m) => Some(m),
            AnyModel::Ntgat(m) => Some(m),
            AnyModel::Calf(m) => Some(m),
            AnyModel::ClusterCalf(_) => None,
        }
    }

    pub fn input_length(&self) -> usize {
        match self {
            AnyModel::ClusterCalf(m) => m.input_length(),
            other => other.single().expect("single model").input_length(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            AnyModel::ClusterCalf(m) => m.horizon(),
            other => other.single().expect("single model").horizon(),
        }
    }

    pub fn n_series(&self) -> usize {
        match self {
            AnyModel::ClusterCalf(m) => m.n_series(),
            other => other.single().expect("single model").n_series(),
        }
    }

    /// Inference-mode predictions in scaled units.
    pub fn predict(&self, inputs: &Array3<f64>) -> Result<Array3<f64>> {
        match self {
            AnyModel::ClusterCalf(m) => m.predict(inputs),
            other => other.single().expect("single model").predict(inputs),
        }
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let (config, params, assignment) = match self {
            AnyModel::ClusterCalf(m) => {
                let first = m.models.values().next().expect("k >= 1");
                let mut cfg = first.config_json();
                cfg.as_object_mut().expect("struct config").remove("n_series");
                (cfg, m.models.values().map(|c| c.params().clone()).collect(), Some(m.assignment.clone()))
            }
            other => {
                let f = other.single().expect("single model");
                (f.config_json(), vec![f.params().clone()], None)
            }
        };
        let mut param_shapes = BTreeMap::new();
        for (k, store) in params.iter().enumerate() {
            for (name, dims) in store.shapes() {
                let key = if assignment.is_some() { format!("c{k}/{name}") } else { name };
                param_shapes.insert(key, dims);
            }
        }
        Checkpoint {
            manifest: CheckpointManifest {
                version: CHECKPOINT_VERSION,
                architecture: self.architecture(),
                config,
                seed,
                param_shapes,
            },
            assignment,
            params,
        }
    }

    /// Rebuilds the model from its config and seed, then loads the stored values.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let m = &ckpt.manifest;
        let bad = |e: serde_json::Error| Error::Config(format!("checkpoint config: {e}"));
        let one = |k: usize| -> Result<&ParamStore> {
            ckpt.params
                .get(k)
                .ok_or_else(|| Error::Integrity(format!("checkpoint lacks parameter set {k}")))
        };
        let mut model = match m.architecture {
            Architecture::Lstm => {
                let cfg: LstmConfig = serde_json::from_value(m.config.clone()).map_err(bad)?;
                AnyModel::Lstm(LstmModel::new(cfg, m.seed)?)
            }
            Architecture::Ntgat => {
                let cfg: NtgatConfig = serde_json::from_value(m.config.clone()).map_err(bad)?;
                AnyModel::Ntgat(NtgatModel::new(cfg, m.seed)?)
            }
            Architecture::Calf => {
                let cfg: CalfConfig = serde_json::from_value(m.config.clone()).map_err(bad)?;
                AnyModel::Calf(CalfModel::new(cfg, m.seed)?)
            }
            Architecture::ClusterCalf => {
                let assignment = ckpt
                    .assignment
                    .clone()
                    .ok_or_else(|| Error::Integrity("cluster checkpoint lacks its assignment".into()))?;
                let mut raw = m.config.clone();
                raw.as_object_mut()
                    .ok_or_else(|| Error::Config("checkpoint config is not an object".into()))?
                    .insert("n_series".into(), serde_json::json!(assignment.n()));
                let cfg: CalfConfig = serde_json::from_value(raw).map_err(bad)?;
                AnyModel::ClusterCalf(ClusterCalfModel::new(assignment, &cfg, m.seed)?)
            }
        };
        match &mut model {
            AnyModel::Lstm(x) => x.params_mut().load_values(one(0)?)?,
            AnyModel::Ntgat(x) => x.params_mut().load_values(one(0)?)?,
            AnyModel::Calf(x) => x.params_mut().load_values(one(0)?)?,
            AnyModel::ClusterCalf(x) => {
                if ckpt.params.len() != x.models.len() {
                    return Err(Error::Integrity(format!(
                        "checkpoint has {} parameter sets for {} clusters",
                        ckpt.params.len(),
                        x.models.len()
                    )));
                }
                for (k, sub) in x.models.values_mut().enumerate() {
                    sub.params_mut().load_values(one(k)?)?;
                }
            }
        }
        Ok(model)
    }
}

/// Little-endian `u64 rows, u64 cols` followed by `rows·cols` f64 values, row-major.
pub fn save_vocab_binary(path: &Path, vocab: &Array2<f64>) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(&(vocab.nrows() as u64).to_le_bytes())?;
    put(&(vocab.ncols() as u64).to_le_bytes())?;
    for v in vocab.iter() {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_vocab_binary(path: &Path) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let word = |i: usize| -> [u8; 8] { bytes[i * 8..i * 8 + 8].try_into().expect("8 bytes") };
    if bytes.len() < 16 {
        return Err(Error::Parse {
            row: 0,
            message: format!("{}: too short for a matrix header", path.display()),
        });
    }
    let rows = u64::from_le_bytes(word(0)) as usize;
    let cols = u64::from_le_bytes(word(1)) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(16));
    if expected != Some(bytes.len()) {
        return Err(Error::Parse {
            row: 0,
            message: format!("{}: header says {rows}x{cols} but file has {} bytes", path.display(), bytes.len()),
        });
    }
    let values = (0..rows * cols).map(|i| f64::from_le_bytes(word(i + 2))).collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("checked length"))
}

/// Header-less CSV, one vocabulary row per line.
pub fn load_vocab_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse {
                row: r + 1,
                message: format!("expected {} columns, found {}", cols.unwrap_or(0), rec.len()),
            });
        }
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: r + 1,
                message: format!("not a number: {field:?}"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), values).map_err(|e| Error::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AdjacencySpec;

    fn x() -> Array3<f64> {
        Array3::from_shape_fn((2, 4, 3), |(a, b, c)| (a + b * c) as f64 / 7.0)
    }

    fn round_trip(model: AnyModel) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let ckpt = model.to_checkpoint(11);
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let back = AnyModel::from_checkpoint(&loaded).unwrap();
        assert_eq!(back.architecture(), model.architecture());
        assert_eq!(back.predict(&x()).unwrap(), model.predict(&x()).unwrap());
    }

    #[test]
    fn every_architecture_round_trips() {
        let lstm = LstmConfig {
            input_length: 4,
            hidden_units: 3,
            dropout_rate: 0.1,
            horizon: 2,
            n_series: 3,
        };
        // a different seed proves values come from the file, not the rebuild
        round_trip(AnyModel::Lstm(LstmModel::new(lstm, 5).unwrap()));
        let gat = NtgatConfig {
            n_heads: 1,
            gat_out_dim: 2,
            lift_dim: 2,
            lstm1_hidden: 3,
            lstm2_hidden: 3,
            ..NtgatConfig::new(AdjacencySpec::identity(3), 4, 2)
        };
        round_trip(AnyModel::Ntgat(NtgatModel::new(gat, 6).unwrap()));
        let calf = CalfConfig {
            d_model: 4,
            n_heads: 2,
            n_layers: 1,
            vocab_size: 8,
            n_principal: 2,
            ..CalfConfig::new(4, 2, 3)
        };
        round_trip(AnyModel::Calf(CalfModel::new(calf.clone(), 7).unwrap()));
        let assignment = ClusterAssignment::new(2, vec![0, 1, 0]).unwrap();
        round_trip(AnyModel::ClusterCalf(ClusterCalfModel::new(assignment, &calf, 8).unwrap()));
    }

    #[test]
    fn vocab_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Array2::from_shape_fn((3, 4), |(i, j)| i as f64 * 0.5 - j as f64);
        let bin = dir.path().join("v.bin");
        save_vocab_binary(&bin, &vocab).unwrap();
        assert_eq!(load_vocab_binary(&bin).unwrap(), vocab);
        let csv_path = dir.path().join("v.csv");
        let text: String = vocab
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        fs::write(&csv_path, text).unwrap();
        assert_eq!(load_vocab_csv(&csv_path).unwrap(), vocab);
        fs::write(&bin, [0u8; 20]).unwrap();
        assert!(load_vocab_binary(&bin).is_err());
    }
}
