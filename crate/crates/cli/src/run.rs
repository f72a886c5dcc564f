//! State shared by every command: resolved configuration, output paths,
//! manifests and the failure classes that map to exit codes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cnwf::feec::FineComplex;
use cnwf::mesh::TriMesh;
use serde::Serialize;

use crate::config::{RunConfig, Seeds};

#[derive(Debug)]
pub enum Failure {
    Core(cnwf::Error),
    /// The command ran but a requested acceptance check did not pass.
    Check(String),
}

impl From<cnwf::Error> for Failure {
    fn from(e: cnwf::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        use cnwf::Error::*;
        match self {
            Failure::Check(_) => 3,
            Failure::Core(Assembly(_) | Singular(_) | NonConvergence { .. } | UndefinedMetric(_) | Experiment(_)) => 2,
            Failure::Core(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub jobs: usize,
    pub config_hash: String,
}

impl Run {
    pub fn new(cfg: RunConfig, jobs: usize) -> CmdResult<Self> {
        let out = cfg.output_dir();
        fs::create_dir_all(&out)?;
        let config_hash = cfg.hash()?;
        Ok(Self { cfg, out, jobs: jobs.max(1), config_hash })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    pub fn mesh(&self) -> CmdResult<(TriMesh, FineComplex)> {
        let mesh = self.cfg.build_mesh()?;
        let fc = FineComplex::assemble(&mesh)?;
        Ok((mesh, fc))
    }

    pub fn write_json<T: Serialize>(&self, rel: impl AsRef<Path>, value: &T) -> CmdResult<PathBuf> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            fs::create_dir_all(d)?;
        }
        fs::write(&p, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(p)
    }

    pub fn write_text(&self, rel: impl AsRef<Path>, text: &str) -> CmdResult<PathBuf> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            fs::create_dir_all(d)?;
        }
        fs::write(&p, text)?;
        Ok(p)
    }

    /// `<command>_manifest.json`: everything needed to reproduce the outputs.
    pub fn manifest(&self, command: &str, inputs: BTreeMap<String, String>, outputs: &[PathBuf]) -> CmdResult {
        #[derive(Serialize)]
        struct RunManifest<'a> {
            command: &'a str,
            version: &'a str,
            config_hash: &'a str,
            seeds: &'a Seeds,
            jobs: usize,
            config: &'a RunConfig,
            inputs: BTreeMap<String, String>,
            outputs: Vec<String>,
        }
        let outputs = outputs
            .iter()
            .map(|p| p.strip_prefix(&self.out).unwrap_or(p).display().to_string())
            .collect();
        let m = RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: &self.config_hash,
            seeds: &self.cfg.seeds,
            jobs: self.jobs,
            config: &self.cfg,
            inputs,
            outputs,
        };
        self.write_json(format!("{command}_manifest.json"), &m)?;
        Ok(())
    }
}
