//! Checkpoints (little-endian `f64` blob plus JSON manifest) and the JSONL
//! training log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::Adam;
use super::ParamSet;
use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::mesh::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset in scalars from the start of the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Model family, e.g. `cnwf`, `mlp`, `encoder`.
    pub kind: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
    pub n_params: usize,
    /// Adam moments follow the parameters in the same tensor layout.
    pub optimizer: Option<OptimizerEntry>,
    pub blob: String,
    pub blob_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub step: u64,
    pub params: ParamSet,
    pub optimizer: Option<Adam>,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

impl Checkpoint {
    /// Writes `<stem>.bin` and `<stem>.json` into `dir`; returns the manifest path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut tensors = Vec::new();
        let mut data: Vec<f64> = Vec::with_capacity(self.params.n_scalars() * 3);
        for (name, t) in self.params.names.iter().zip(&self.params.tensors) {
            tensors.push(TensorEntry { name: name.clone(), rows: t.nrows(), cols: t.ncols(), offset: data.len() });
            data.extend(t.iter());
        }
        let n_params = data.len();
        if let Some(opt) = &self.optimizer {
            data.extend(opt.m.iter().flatten());
            data.extend(opt.v.iter().flatten());
        }
        let bytes: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
        let blob = format!("{stem}.bin");
        let blob_path = dir.join(&blob);
        fs::write(&blob_path, &bytes).map_err(|e| io_err(&blob_path, e))?;
        let manifest = Manifest {
            kind: self.kind.clone(),
            config: self.config.clone(),
            config_hash: config_hash(&self.config),
            step: self.step,
            tensors,
            n_params,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerEntry { lr: o.lr, beta1: o.beta1, beta2: o.beta2, eps: o.eps, t: o.t }),
            blob,
            blob_sha256: sha256_hex(&bytes),
        };
        let path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    /// Reads a checkpoint from its manifest, verifying the blob digest.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| io_err(manifest_path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Validation(format!("bad manifest: {e}")))?;
        if config_hash(&m.config) != m.config_hash {
            return Err(Error::Validation("config hash does not match the stored config".into()));
        }
        let blob_path = manifest_path.parent().unwrap_or(Path::new(".")).join(&m.blob);
        let bytes = fs::read(&blob_path).map_err(|e| io_err(&blob_path, e))?;
        if sha256_hex(&bytes) != m.blob_sha256 {
            return Err(Error::Validation(format!("{} is corrupt (digest mismatch)", blob_path.display())));
        }
        let data: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let expect = if m.optimizer.is_some() { 3 * m.n_params } else { m.n_params };
        if data.len() != expect || bytes.len() % 8 != 0 {
            return Err(Error::Validation(format!("blob holds {} scalars, manifest expects {expect}", data.len())));
        }
        let section = |base: usize| -> Result<Vec<Mat>> {
            m.tensors
                .iter()
                .map(|t| {
                    let (a, b) = (base + t.offset, base + t.offset + t.rows * t.cols);
                    if b > base + m.n_params {
                        return Err(Error::Validation(format!("tensor {} overruns the blob", t.name)));
                    }
                    Ok(Mat::from_column_slice(t.rows, t.cols, &data[a..b]))
                })
                .collect()
        };
        let params = ParamSet { names: m.tensors.iter().map(|t| t.name.clone()).collect(), tensors: section(0)? };
        let optimizer = match &m.optimizer {
            Some(o) => {
                let flat = |v: Vec<Mat>| v.into_iter().map(|t| t.as_slice().to_vec()).collect();
                Some(Adam {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    t: o.t,
                    m: flat(section(m.n_params)?),
                    v: flat(section(2 * m.n_params)?),
                })
            }
            None => None,
        };
        Ok(Self { kind: m.kind, config: m.config, step: m.step, params, optimizer })
    }
}

/// Append-only JSON-lines log, one record per training step.
pub struct StepLog {
    file: fs::File,
}

impl StepLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        Ok(Self { file: fs::File::create(path).map_err(|e| io_err(path, e))? })
    }

    /// Opens an existing log for appending (resumed runs).
    pub fn append(path: &Path) -> Result<Self> {
        let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
        Ok(Self { file })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record)?;
        Ok(writeln!(self.file, "{line}")?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    #[test]
    fn round_trip_with_optimizer_state() {
        let cfg = ModelConfig::default();
        let params = init_params(&cfg, 5);
        let mut opt = Adam::new(&params, 1e-3);
        let mut p2 = params.clone();
        let grads: Vec<Mat> = params.tensors.iter().map(|t| t.map(|x| x.sin())).collect();
        opt.step(&mut p2, &grads);
        let ck = Checkpoint { kind: "cnwf".into(), config: serde_json::to_value(&cfg).unwrap(), step: 1, params: p2.clone(), optimizer: Some(opt.clone()) };
        let dir = std::env::temp_dir().join(format!("cnwf-ck-{}", std::process::id()));
        let path = ck.save(&dir, "model").unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.params.names, p2.names);
        assert_eq!(back.params.flatten(), p2.flatten());
        assert_eq!(back.optimizer.unwrap(), opt);
        assert_eq!(back.step, 1);

        // a flipped byte is detected
        let blob = dir.join("model.bin");
        let mut bytes = fs::read(&blob).unwrap();
        bytes[3] ^= 1;
        fs::write(&blob, bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Validation(_))));
        fs::remove_dir_all(dir).ok();
    }
}
