//! Run configuration: one TOML file with a section per stage, plus
//! `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use cnwf::coverage::UpdateSchedule;
use cnwf::forward::{load_velocity, DatasetConfig, VelocityMode};
use cnwf::geodesy::Geodesy;
use cnwf::mesh::{generate_disk_mesh, generate_grid_mesh, generate_l_mesh, generate_u_mesh, load_mesh, TriMesh};
use cnwf::model::trainer::TrainConfig;
use cnwf::model::ModelConfig;
use cnwf::{Error, Result};
use serde::{Deserialize, Serialize};

/// Output directories given as relative paths are resolved against this.
pub const OUTPUT_ROOT_VAR: &str = "CNWF_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshKind {
    Disk,
    /// `[0,2]²` minus the upper-right quadrant.
    L,
    /// `[0,3]²` with a notch from the top.
    U,
    /// Unit square.
    Square,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub kind: MeshKind,
    pub h: f64,
    pub radius: f64,
    pub path: Option<PathBuf>,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { kind: MeshKind::Disk, h: 0.1, radius: 1.0, path: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityKind {
    RandomUniform,
    Uniform,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    /// Péclet range; equal ends fix it.
    pub peclet: [f64; 2],
    pub velocity: VelocityKind,
    pub angle: f64,
    pub velocity_file: Option<PathBuf>,
    pub bump_radius: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self { peclet: [1e3, 1e3], velocity: VelocityKind::RandomUniform, angle: 0.0, velocity_file: None, bump_radius: 0.07 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSection {
    pub n: usize,
    /// Reading noise as a fraction of the field maximum.
    pub noise_u: f64,
    /// Absolute velocity noise.
    pub noise_v: f64,
    /// Boundary exclusion for random sensor and source positions.
    pub delta: f64,
}

impl Default for SensorSection {
    fn default() -> Self {
        Self { n: 5, noise_u: 0.0, noise_v: 0.0, delta: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub lr: f64,
    pub steps: u64,
    pub batch: usize,
    pub cache: usize,
    /// Samples replaced every `refresh_every` steps.
    pub refresh_count: usize,
    pub refresh_every: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub baseline_hidden: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 2000,
            batch: 64,
            cache: 1600,
            refresh_count: 0,
            refresh_every: 0,
            log_every: 50,
            checkpoint_every: 500,
            baseline_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeodesyKind {
    Euclidean,
    Geodesic,
}

impl From<GeodesyKind> for Geodesy {
    fn from(k: GeodesyKind) -> Self {
        match k {
            GeodesyKind::Euclidean => Geodesy::Euclidean,
            GeodesyKind::Geodesic => Geodesy::Geodesic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageSection {
    pub iterations: usize,
    pub inner: usize,
    pub alpha: f64,
    pub schedule: UpdateSchedule,
    pub safeguard: bool,
    pub trials: usize,
    pub geodesy: GeodesyKind,
    pub bump: BumpSection,
}

impl Default for CoverageSection {
    fn default() -> Self {
        Self {
            iterations: 20,
            inner: 3,
            alpha: 0.5,
            schedule: UpdateSchedule::Every,
            safeguard: false,
            trials: 20,
            geodesy: GeodesyKind::Geodesic,
            bump: BumpSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BumpSection {
    pub x_star: [f64; 2],
    pub r_prime: f64,
    pub r_target: f64,
    pub gains: Vec<f64>,
    /// Horizon in units of `1/α`.
    pub horizon: f64,
    pub dt: f64,
}

impl Default for BumpSection {
    fn default() -> Self {
        Self { x_star: [0.2, 0.3], r_prime: 0.5, r_target: 0.75, gains: vec![0.25, 0.5, 1.0], horizon: 3.0, dt: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub samples: usize,
    pub sweep: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { samples: 64, sweep: (3..=12).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub model: u64,
    pub train: u64,
    pub eval: u64,
    pub coverage: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { data: 1, model: 2, train: 3, eval: 4, coverage: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshSection,
    pub physics: PhysicsSection,
    pub sensors: SensorSection,
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub coverage: CoverageSection,
    pub eval: EvalSection,
    pub seeds: Seeds,
    pub output: OutputSection,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

/// Sets `a.b.c = value` in a TOML tree; `value` is parsed as TOML and falls
/// back to a bare string.
fn set_path(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, p) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| invalid(format!("override `{key}`: `{p}` is not a table")))?;
        if i + 1 == parts.len() {
            table.insert(p.to_string(), value);
            return Ok(());
        }
        node = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(invalid(format!("empty override key `{key}`")))
}

impl RunConfig {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: toml::Value = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| invalid(format!("override `{o}` is not key=value")))?;
            set_path(&mut tree, k.trim(), v.trim())?;
        }
        let cfg: RunConfig = tree.try_into().map_err(|e: toml::de::Error| invalid(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut cfg = Self::parse(&text, overrides)?;
        // paths in the file are relative to the file
        if let Some(base) = path.and_then(|p| p.parent()) {
            for p in [&mut cfg.mesh.path, &mut cfg.physics.velocity_file].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mesh;
        if m.kind == MeshKind::File {
            match &m.path {
                Some(p) if p.is_file() => {}
                Some(p) => return Err(invalid(format!("mesh file {} does not exist", p.display()))),
                None => return Err(invalid("mesh.kind = \"file\" needs mesh.path")),
            }
        } else if !(m.h > 0.0 && m.radius > 0.0) {
            return Err(invalid("mesh.h and mesh.radius must be positive"));
        }
        let ph = &self.physics;
        if !(ph.peclet[0] > 0.0 && ph.peclet[1] >= ph.peclet[0]) {
            return Err(invalid("physics.peclet must be a positive increasing range"));
        }
        if ph.velocity == VelocityKind::File && !ph.velocity_file.as_ref().is_some_and(|p| p.is_file()) {
            return Err(invalid("physics.velocity = \"file\" needs an existing physics.velocity_file"));
        }
        if !(ph.bump_radius > 0.0) {
            return Err(invalid("physics.bump_radius must be positive"));
        }
        let s = &self.sensors;
        if s.n == 0 || !(s.noise_u >= 0.0 && s.noise_v >= 0.0 && s.delta >= 0.0) {
            return Err(invalid("sensors.n must be positive and noise/delta nonnegative"));
        }
        self.model.validate()?;
        self.train_config().validate()?;
        let t = &self.training;
        if t.cache == 0 || t.baseline_hidden == 0 {
            return Err(invalid("training.cache and training.baseline_hidden must be positive"));
        }
        let c = &self.coverage;
        if !(c.alpha > 0.0 && c.alpha <= 1.0) {
            return Err(invalid("coverage.alpha must lie in (0, 1]"));
        }
        let b = &c.bump;
        if !(b.r_prime > 0.0 && b.r_prime < b.r_target && b.r_target < 1.0) {
            return Err(invalid("coverage.bump needs 0 < r_prime < r_target < 1"));
        }
        if b.gains.iter().any(|&a| !(a > 0.0)) || !(b.horizon > 0.0 && b.dt > 0.0) {
            return Err(invalid("coverage.bump gains, horizon and dt must be positive"));
        }
        if self.eval.samples == 0 || self.eval.sweep.contains(&0) {
            return Err(invalid("eval.samples and sweep sensor counts must be positive"));
        }
        Ok(())
    }

    pub fn build_mesh(&self) -> Result<TriMesh> {
        let m = &self.mesh;
        match m.kind {
            MeshKind::Disk => generate_disk_mesh(m.radius, m.h),
            MeshKind::L => generate_l_mesh(m.h),
            MeshKind::U => generate_u_mesh(m.h),
            MeshKind::Square => {
                let n = ((1.0 / m.h).ceil() as usize).max(1);
                generate_grid_mesh([0.0, 0.0], [1.0, 1.0], n, n, |_| true)
            }
            MeshKind::File => load_mesh(m.path.as_ref().expect("validated")),
        }
    }

    pub fn dataset_config(&self, mesh: &TriMesh, n_sensors: usize, capacity: usize) -> Result<DatasetConfig> {
        let velocity = match self.physics.velocity {
            VelocityKind::RandomUniform => VelocityMode::RandomUniform,
            VelocityKind::Uniform => VelocityMode::Uniform { angle: self.physics.angle },
            VelocityKind::File => VelocityMode::Field {
                velocity: load_velocity(self.physics.velocity_file.as_ref().expect("validated"), mesh.n_vertices())?,
            },
        };
        Ok(DatasetConfig {
            peclet: self.physics.peclet,
            velocity,
            n_sensors,
            noise_u: self.sensors.noise_u,
            noise_v: self.sensors.noise_v,
            delta: self.sensors.delta,
            bump_radius: self.physics.bump_radius,
            capacity,
            refresh_count: self.training.refresh_count,
            nonlinear: None,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig { lr: t.lr, steps: t.steps, batch: t.batch, seed: self.seeds.train }
    }

    /// Output directory, with relative paths placed under the output root.
    pub fn output_dir(&self) -> PathBuf {
        let d = &self.output.dir;
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if d.is_relative() => PathBuf::from(root).join(d),
            _ => d.clone(),
        }
    }

    pub fn hash(&self) -> Result<String> {
        Ok(cnwf::mesh::sha256_hex(&serde_json::to_vec(self)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_beat_file_values() {
        let text = "[training]\nsteps = 10\n[coverage]\nschedule = { at = [5, 11, 17] }\n";
        let cfg = RunConfig::parse(text, &["training.steps=3".into(), "output.dir=out/x".into(), "model.n_coarse=4".into()]).unwrap();
        assert_eq!(cfg.training.steps, 3);
        assert_eq!(cfg.output.dir, PathBuf::from("out/x"));
        assert_eq!(cfg.model.n_coarse, 4);
        assert_eq!(cfg.coverage.schedule, UpdateSchedule::At(vec![5, 11, 17]));
    }

    #[test]
    fn unknown_keys_and_missing_files_are_rejected() {
        assert!(RunConfig::parse("[training]\nstepz = 1\n", &[]).is_err());
        let cfg = RunConfig::parse("[mesh]\nkind = \"file\"\npath = \"/nonexistent/mesh.txt\"\n", &[]).unwrap();
        assert!(cfg.validate().unwrap_err().is_validation());
    }
}
