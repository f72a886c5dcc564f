use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cnwf::coverage::{
    adaptive_loop, convergence_experiment, summarize, write_trajectory_csv, AdaptiveConfig, AdaptiveRun, BaselineDensity,
    CnwfDensity, ConvergenceConfig, ConvergenceResult, CoverageDomain, DensityModel, OracleDensity,
};
use cnwf::feec::{Cochain0, FineComplex};
use cnwf::forward::{
    consistency_error, dataset_config_hash, generate_sample, load_dataset, load_manifest, sample_seed, save_dataset,
    DatasetConfig, ObservationSet, SampleCache, SampleTriple, ValidRegion,
};
use cnwf::mesh::{load_mesh, TriMesh};
use cnwf::model::baseline::{init_baseline, BaselineConfig, BaselineKind};
use cnwf::model::checkpoint::{Checkpoint, StepLog};
use cnwf::model::ops::density_divergence;
use cnwf::model::train::{resolve_config, Adam};
use cnwf::model::trainer::{evaluate, train, StepRecord, TrainConfig, Trainee};
use cnwf::model::{init_params, ModelConfig, ModelContext, ParamSet};
use cnwf::Error;
use serde::{Deserialize, Serialize};

use crate::config::MeshKind;
use crate::plot::{field_svg, line_chart_svg};
use crate::pool::par_map;
use crate::run::{CmdResult, Failure, Run};

#[derive(Debug, Serialize)]
struct MeshSummary {
    vertices: usize,
    triangles: usize,
    edges: usize,
    boundary_vertices: usize,
    area: f64,
    max_edge: f64,
    hash: String,
}

fn mesh_summary(mesh: &TriMesh) -> MeshSummary {
    MeshSummary {
        vertices: mesh.n_vertices(),
        triangles: mesh.n_triangles(),
        edges: mesh.n_edges(),
        boundary_vertices: mesh.boundary_vertex_flags().iter().filter(|&&b| b).count(),
        area: mesh.total_area(),
        max_edge: mesh.max_edge_length(),
        hash: mesh.content_hash(),
    }
}

pub fn mesh(run: &Run, validate: Option<&Path>) -> CmdResult {
    if let Some(p) = validate {
        let mesh = load_mesh(p)?;
        println!("{}", serde_json::to_string_pretty(&mesh_summary(&mesh))?);
        return Ok(());
    }
    let (mesh, _) = run.mesh()?;
    let path = run.path("mesh.txt");
    mesh.save(&path)?;
    let s = mesh_summary(&mesh);
    println!(
        "mesh: {} vertices, {} triangles, area {:.6}, hash {}",
        s.vertices, s.triangles, s.area, s.hash
    );
    let summary = run.write_json("mesh_summary.json", &s)?;
    run.manifest("mesh", BTreeMap::new(), &[path, summary])?;
    Ok(())
}

/// Draws `capacity` samples as `sample_seed(seed, i)` on the worker pool.
fn draw_samples(run: &Run, mesh: &TriMesh, fc: &FineComplex, dcfg: &DatasetConfig, seed: u64) -> CmdResult<Vec<SampleTriple>> {
    if dcfg.n_sensors == 0 {
        return Err(Error::Argument("at least one sensor is required".into()).into());
    }
    let valid = ValidRegion::new(mesh, dcfg.delta);
    let idx: Vec<u64> = (0..dcfg.capacity as u64).collect();
    let drawn = par_map(&idx, run.jobs, |_, &i| generate_sample(mesh, fc, &valid, dcfg, sample_seed(seed, i)));
    Ok(drawn.into_iter().collect::<cnwf::Result<Vec<_>>>()?)
}

/// Generates the training set unless an identical one is already on disk.
pub fn ensure_dataset(run: &Run, mesh: &TriMesh, fc: &FineComplex) -> CmdResult<(PathBuf, Vec<SampleTriple>)> {
    let cfg = &run.cfg;
    let dir = run.path("data");
    let dcfg = cfg.dataset_config(mesh, cfg.sensors.n, cfg.training.cache)?;
    let hash = dataset_config_hash(&dcfg, cfg.seeds.data, &mesh.content_hash())?;
    if let Ok(m) = load_manifest(&dir) {
        if m.config_hash == hash && m.files.iter().all(|f| dir.join(f).is_file()) {
            log::info!("dataset in {} is up to date ({} samples)", dir.display(), m.files.len());
            let (_, samples) = load_dataset(&dir)?;
            return Ok((dir, samples));
        }
    }
    let samples = draw_samples(run, mesh, fc, &dcfg, cfg.seeds.data)?;
    let cache = SampleCache::from_samples(dcfg, cfg.seeds.data, samples);
    save_dataset(&dir, mesh, &cache)?;
    println!("dataset: {} samples written to {}", cache.len(), dir.display());
    Ok((dir, cache.samples))
}

pub fn datagen(run: &Run) -> CmdResult {
    let (mesh, fc) = run.mesh()?;
    let (dir, samples) = ensure_dataset(run, &mesh, &fc)?;
    let mut outputs = vec![dir.join("manifest.json")];
    if let Some(s) = samples.first() {
        let svg = field_svg(&mesh, &s.field, &[], &s.observation.positions, "sample 0: field and sensors");
        outputs.push(run.write_text("data/sample_00000.svg", &svg)?);
    }
    let inputs = BTreeMap::from([("mesh".to_string(), mesh.content_hash())]);
    run.manifest("datagen", inputs, &outputs)?;
    Ok(())
}

/// Stored alongside the parameters of every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub kind: String,
    pub model: ModelConfig,
    pub baseline: Option<BaselineConfig>,
    pub train: TrainConfig,
    pub mesh_hash: String,
    pub dataset_hash: String,
    pub initial_loss: f64,
}

impl TrainMeta {
    fn trainee(&self) -> Trainee<'_> {
        match &self.baseline {
            Some(b) => Trainee::Baseline(b),
            None => Trainee::Cnwf,
        }
    }
}

/// Loss over a sample set in chunks, weighted by the samples each chunk used.
fn dataset_loss(params: &ParamSet, ctx: &ModelContext, samples: &[SampleTriple], cfg: &ModelConfig, trainee: Trainee) -> CmdResult<StepRecord> {
    let mut acc = StepRecord::default();
    for chunk in samples.chunks(64) {
        let refs: Vec<&SampleTriple> = chunk.iter().collect();
        let (r, _) = evaluate(params, ctx, &refs, cfg, trainee)?;
        let w = r.used as f64;
        acc.total += w * r.total;
        acc.field += w * r.field;
        acc.transport += w * r.transport;
        acc.used += r.used;
        acc.excluded += r.excluded;
        acc.degenerate += r.degenerate;
        acc.newton_max = acc.newton_max.max(r.newton_max);
    }
    let n = acc.used.max(1) as f64;
    acc.total /= n;
    acc.field /= n;
    acc.transport /= n;
    Ok(acc)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    kind: String,
    steps: u64,
    initial: f64,
    final_total: f64,
    final_field: f64,
    final_transport: f64,
    ratio: f64,
    final_excluded: usize,
    final_degenerate: usize,
    excluded_during_training: usize,
}

pub fn train_cmd(run: &Run, baseline: Option<BaselineKind>, resume: bool, check: bool) -> CmdResult {
    let cfg = &run.cfg;
    let (mesh, fc) = run.mesh()?;
    let (data_dir, mut samples) = ensure_dataset(run, &mesh, &fc)?;
    let dataset_hash = load_manifest(&data_dir)?.config_hash;
    let kind = match baseline {
        None => "cnwf",
        Some(BaselineKind::Mlp) => "mlp",
        Some(BaselineKind::Encoder) => "encoder",
    };
    let dir = run.path(format!("train/{kind}"));
    let latest = dir.join("latest.json");
    let base_ctx = ModelContext::new(&mesh, &fc, &cfg.model)?;

    let (meta, mut params, mut opt, start, mut log) = if resume && latest.is_file() {
        let ck = Checkpoint::load(&latest)?;
        let mut meta: TrainMeta = serde_json::from_value(ck.config.clone())?;
        if meta.mesh_hash != mesh.content_hash() || meta.dataset_hash != dataset_hash {
            return Err(Error::Validation("checkpoint was trained on a different mesh or dataset".into()).into());
        }
        // only the step budget may change between a run and its continuation
        let want = cfg.train_config();
        if (TrainConfig { steps: meta.train.steps, ..want.clone() }) != meta.train {
            return Err(Error::Validation("learning rate, batch size and seed must match the checkpoint".into()).into());
        }
        meta.train.steps = want.steps;
        let opt = ck.optimizer.ok_or_else(|| Error::Validation("checkpoint has no optimizer state".into()))?;
        println!("resuming {kind} from step {}", ck.step);
        (meta, ck.params, opt, ck.step, StepLog::append(&dir.join("log.jsonl"))?)
    } else {
        let (params, model, bcfg) = match baseline {
            None => {
                let p = init_params(&cfg.model, cfg.seeds.model);
                let all: Vec<&SampleTriple> = samples.iter().collect();
                let resolved = resolve_config(&p, &base_ctx, &all, &cfg.model)?;
                (p, resolved, None)
            }
            Some(k) => {
                let b = BaselineConfig { hidden: cfg.training.baseline_hidden, ..BaselineConfig::new(k, cfg.sensors.n) };
                (init_baseline(&b, &cfg.model, mesh.n_vertices(), cfg.seeds.model), cfg.model.clone(), Some(b))
            }
        };
        let mut meta = TrainMeta {
            kind: kind.into(),
            model,
            baseline: bcfg,
            train: cfg.train_config(),
            mesh_hash: mesh.content_hash(),
            dataset_hash,
            initial_loss: 0.0,
        };
        meta.initial_loss = dataset_loss(&params, &base_ctx, &samples, &meta.model, meta.trainee())?.total;
        println!("{kind}: initial loss {:.6}", meta.initial_loss);
        let opt = Adam::new(&params, cfg.training.lr);
        (meta, params, opt, 0, StepLog::create(&dir.join("log.jsonl"))?)
    };
    let ctx = ModelContext::new(&mesh, &fc, &meta.model)?;
    let trainee = meta.trainee();
    let config = serde_json::to_value(&meta)?;

    // cache refresh points replayed so a resumed run sees the same samples
    let t = &cfg.training;
    let refresh = t.refresh_every > 0 && t.refresh_count > 0;
    let mut cache = SampleCache::from_samples(cfg.dataset_config(&mesh, cfg.sensors.n, t.cache)?, cfg.seeds.data, std::mem::take(&mut samples));
    let valid = ValidRegion::new(&mesh, cfg.sensors.delta);
    let mut boundaries: Vec<u64> = if refresh { (1..).map(|i| i * t.refresh_every).take_while(|&b| b < meta.train.steps).collect() } else { vec![] };
    for &b in boundaries.iter().filter(|&&b| b <= start) {
        log::debug!("replaying cache refresh at step {b}");
        cache.refresh(&mesh, &fc, &valid)?;
    }
    boundaries.retain(|&b| b > start);
    boundaries.push(meta.train.steps);

    let mut excluded = 0usize;
    let mut step0 = start;
    for &end in &boundaries {
        let seg = TrainConfig { steps: end, ..meta.train.clone() };
        train(&mut params, &mut opt, &ctx, &cache.samples, &meta.model, &seg, trainee, step0, |rec, p, o| {
            log.write(rec)?;
            excluded += rec.excluded;
            let done = rec.step + 1;
            if done % t.log_every.max(1) == 0 {
                println!(
                    "step {done:>6}  loss {:.5}  field {:.5}  transport {:.5}  |g| {:.3}  excluded {}",
                    rec.total, rec.field, rec.transport, rec.grad_norm, rec.excluded
                );
            }
            if done % t.checkpoint_every.max(1) == 0 || done == meta.train.steps {
                let ck = Checkpoint { kind: kind.into(), config: config.clone(), step: done, params: p.clone(), optimizer: Some(o.clone()) };
                ck.save(&dir, "latest")?;
            }
            Ok(())
        })?;
        step0 = end;
        if end < meta.train.steps {
            cache.refresh(&mesh, &fc, &valid)?;
        }
    }
    if start >= meta.train.steps {
        // nothing left to run; still leave a checkpoint behind
        let ck = Checkpoint { kind: kind.into(), config: config.clone(), step: start, params: params.clone(), optimizer: Some(opt.clone()) };
        ck.save(&dir, "latest")?;
    }

    let fin = dataset_loss(&params, &ctx, &cache.samples, &meta.model, trainee)?;
    let summary = TrainSummary {
        kind: kind.into(),
        steps: meta.train.steps,
        initial: meta.initial_loss,
        final_total: fin.total,
        final_field: fin.field,
        final_transport: fin.transport,
        ratio: fin.total / meta.initial_loss,
        final_excluded: fin.excluded,
        final_degenerate: fin.degenerate,
        excluded_during_training: excluded,
    };
    println!(
        "{kind}: loss {:.6} -> {:.6} (ratio {:.3}), {} excluded at the end",
        summary.initial, summary.final_total, summary.ratio, summary.final_excluded
    );
    let mut outputs = vec![latest.clone(), dir.join("log.jsonl")];
    outputs.push(run.write_json(format!("train/{kind}/summary.json"), &summary)?);
    let curve = read_loss_curve(&dir.join("log.jsonl"))?;
    let svg = line_chart_svg(&[("batch loss".into(), curve)], &format!("{kind} training loss"), "step", "loss", true);
    outputs.push(run.write_text(format!("train/{kind}/loss.svg"), &svg)?);
    let inputs = BTreeMap::from([("mesh".to_string(), meta.mesh_hash.clone()), ("dataset".to_string(), meta.dataset_hash.clone())]);
    run.manifest(&format!("train_{kind}"), inputs, &outputs)?;

    if check {
        if summary.final_excluded > 0 {
            return Err(Failure::Check(format!("{} forward solves did not converge", summary.final_excluded)));
        }
        if summary.ratio > 0.5 {
            return Err(Failure::Check(format!("loss ratio {:.3} exceeds 0.5", summary.ratio)));
        }
    }
    Ok(())
}

fn read_loss_curve(path: &Path) -> CmdResult<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: StepRecord = serde_json::from_str(line)?;
        out.push((r.step as f64, r.total));
    }
    Ok(out)
}

/// A trained model restored from a checkpoint manifest.
pub struct LoadedModel {
    pub meta: TrainMeta,
    pub params: ParamSet,
}

impl LoadedModel {
    pub fn load(path: &Path, mesh: &TriMesh) -> CmdResult<Self> {
        let ck = Checkpoint::load(path)?;
        let meta: TrainMeta = serde_json::from_value(ck.config)?;
        if meta.mesh_hash != mesh.content_hash() {
            return Err(Error::Validation(format!("{} was trained on a different mesh", path.display())).into());
        }
        Ok(Self { meta, params: ck.params })
    }
}

enum Predictor<'a> {
    Oracle,
    Model { m: &'a LoadedModel, ctx: &'a ModelContext<'a> },
}

impl Predictor<'_> {
    fn supports(&self, n_sensors: usize) -> bool {
        match self {
            Predictor::Model { m, .. } => match &m.meta.baseline {
                Some(b) if b.kind == BaselineKind::Mlp => b.n_sensors == n_sensors,
                _ => true,
            },
            Predictor::Oracle => true,
        }
    }

    fn density(&self, obs: &ObservationSet, truth: &SampleTriple) -> cnwf::Result<(Cochain0, bool)> {
        match self {
            Predictor::Oracle => Ok((truth.source.clone(), false)),
            Predictor::Model { m, ctx } => match &m.meta.baseline {
                Some(b) => BaselineDensity { params: &m.params, ctx, cfg: &m.meta.model, baseline: b }.density(obs),
                None => CnwfDensity { params: &m.params, ctx, cfg: &m.meta.model }.density(obs),
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    n_sensors: usize,
    supported: bool,
    samples: usize,
    failed: usize,
    degenerate: usize,
    mean_sinkhorn: Option<f64>,
    std_sinkhorn: Option<f64>,
    mean_consistency: Option<f64>,
    max_consistency: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Reference {
    geometry: &'static str,
    model: &'static str,
    w2_initial: f64,
    w2_adaptive: f64,
    consistency: f64,
}

/// Published circle-domain figures, echoed for context only.
const REFERENCE: [Reference; 3] = [
    Reference { geometry: "circle", model: "cnwf", w2_initial: 2.20e-3, w2_adaptive: 7.90e-4, consistency: 3.77e-2 },
    Reference { geometry: "circle", model: "encoder", w2_initial: 7.98e-3, w2_adaptive: 5.25e-3, consistency: 6.70e-2 },
    Reference { geometry: "circle", model: "mlp", w2_initial: 4.58e-2, w2_adaptive: 3.25e-2, consistency: 3.68e-1 },
];

#[derive(Debug, Serialize)]
struct EvalReport {
    model: String,
    checkpoint: Option<String>,
    reference: &'static [Reference],
    sweep: Vec<SweepEntry>,
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (Some(m), Some(v.sqrt()))
}

pub fn eval(run: &Run, checkpoint: Option<&Path>, oracle: bool, check: bool) -> CmdResult {
    let cfg = &run.cfg;
    let (mesh, fc) = run.mesh()?;
    let loaded = match (checkpoint, oracle) {
        (Some(p), false) => Some(LoadedModel::load(p, &mesh)?),
        (None, true) => None,
        _ => return Err(Error::Argument("give exactly one of --checkpoint or --oracle".into()).into()),
    };
    let model_cfg = loaded.as_ref().map_or(cfg.model.clone(), |m| m.meta.model.clone());
    let ctx = ModelContext::new(&mesh, &fc, &model_cfg)?;
    let pred = match &loaded {
        Some(m) => Predictor::Model { m, ctx: &ctx },
        None => Predictor::Oracle,
    };
    let mut sweep = Vec::new();
    for &n in &cfg.eval.sweep {
        if !pred.supports(n) {
            sweep.push(SweepEntry {
                n_sensors: n,
                supported: false,
                samples: 0,
                failed: 0,
                degenerate: 0,
                mean_sinkhorn: None,
                std_sinkhorn: None,
                mean_consistency: None,
                max_consistency: None,
            });
            continue;
        }
        let dcfg = cfg.dataset_config(&mesh, n, cfg.eval.samples)?;
        let set = draw_samples(run, &mesh, &fc, &dcfg, cfg.seeds.eval)?;
        let scored = par_map(&set, run.jobs, |_, s| -> cnwf::Result<(f64, f64, bool)> {
            let (rho, deg) = pred.density(&s.observation, s)?;
            let w = density_divergence(&fc, &ctx.transport, &s.source, &rho);
            let e = consistency_error(&rho, &s.instance(&mesh)?, &mesh, &fc)?;
            Ok((w, e, deg))
        });
        let (mut ws, mut es, mut failed, mut degenerate) = (vec![], vec![], 0, 0);
        for r in scored {
            match r {
                Ok((w, e, d)) => {
                    ws.push(w);
                    es.push(e);
                    degenerate += d as usize;
                }
                Err(e) => {
                    log::warn!("evaluation sample failed: {e}");
                    failed += 1;
                }
            }
        }
        let (mean_sinkhorn, std_sinkhorn) = mean_std(&ws);
        let entry = SweepEntry {
            n_sensors: n,
            supported: true,
            samples: set.len(),
            failed,
            degenerate,
            mean_sinkhorn,
            std_sinkhorn,
            mean_consistency: mean_std(&es).0,
            max_consistency: es.iter().copied().reduce(f64::max),
        };
        println!(
            "N = {n:>2}: sinkhorn {:.4e}  consistency {:.4e}  failed {failed}  degenerate {degenerate}",
            entry.mean_sinkhorn.unwrap_or(f64::NAN),
            entry.mean_consistency.unwrap_or(f64::NAN)
        );
        sweep.push(entry);
    }
    let report = EvalReport {
        model: loaded.as_ref().map_or("oracle".into(), |m| m.meta.kind.clone()),
        checkpoint: checkpoint.map(|p| p.display().to_string()),
        reference: &REFERENCE,
        sweep,
    };
    let name = format!("eval_{}", report.model);
    let metrics = run.write_json(format!("{name}.json"), &report)?;
    let curve: Vec<(f64, f64)> = report.sweep.iter().filter_map(|e| Some((e.n_sensors as f64, e.mean_sinkhorn?))).collect();
    let svg = line_chart_svg(&[(report.model.clone(), curve)], "sensor-count sweep", "sensors", "sinkhorn divergence", true);
    let plot = run.write_text(format!("{name}.svg"), &svg)?;
    run.manifest(&name, BTreeMap::new(), &[metrics, plot])?;
    if check && oracle {
        let worst = report.sweep.iter().filter_map(|e| e.max_consistency).fold(0.0, f64::max);
        if worst > 1e-8 {
            return Err(Failure::Check(format!("oracle consistency error {worst:.3e} exceeds 1e-8")));
        }
    }
    if check && report.sweep.iter().any(|e| e.failed > 0) {
        return Err(Failure::Check("some evaluation samples failed".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageMode {
    Model,
    Oracle,
    Bump,
}

#[derive(Debug, Serialize)]
struct TrialSummary {
    trial: usize,
    initial_sinkhorn: Option<f64>,
    final_sinkhorn: Option<f64>,
    improved: Option<bool>,
    initial_j_true: Option<f64>,
    final_j_true: Option<f64>,
    j_true_monotone: bool,
    density_update_violations: usize,
    model_error_violations: usize,
    model_error_premise: usize,
}

#[derive(Debug, Serialize)]
struct CoverageReport {
    mode: String,
    trials: Vec<TrialSummary>,
    improved_fraction: Option<f64>,
    monotone_fraction: f64,
    density_update_violations: usize,
    model_error_violations: usize,
}

fn j_true_monotone(run: &AdaptiveRun) -> bool {
    let js: Vec<f64> = run.records.iter().flat_map(|r| r.inner_j_true.iter().copied()).collect();
    js.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1e-300))
}

pub fn coverage(run: &Run, mode: CoverageMode, checkpoint: Option<&Path>, check: bool) -> CmdResult {
    match mode {
        CoverageMode::Bump => bump(run, check),
        _ => adaptive(run, mode, checkpoint, check),
    }
}

fn adaptive(run: &Run, mode: CoverageMode, checkpoint: Option<&Path>, check: bool) -> CmdResult {
    let cfg = &run.cfg;
    let (mesh, fc) = run.mesh()?;
    let loaded = match (mode, checkpoint) {
        (CoverageMode::Model, Some(p)) => Some(LoadedModel::load(p, &mesh)?),
        (CoverageMode::Model, None) => return Err(Error::Argument("model mode needs --checkpoint".into()).into()),
        _ => None,
    };
    let model_cfg = loaded.as_ref().map_or(cfg.model.clone(), |m| m.meta.model.clone());
    let ctx = ModelContext::new(&mesh, &fc, &model_cfg)?;
    let dom = CoverageDomain::new(&mesh, &fc, cfg.coverage.geodesy.into());
    let dcfg = cfg.dataset_config(&mesh, cfg.sensors.n, cfg.coverage.trials)?;
    let truths = draw_samples(run, &mesh, &fc, &dcfg, cfg.seeds.coverage)?;
    let c = &cfg.coverage;
    let runs = par_map(&truths, run.jobs, |i, truth| -> cnwf::Result<AdaptiveRun> {
        let umax = truth.field.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        let acfg = AdaptiveConfig {
            iterations: c.iterations,
            inner: c.inner,
            alpha: c.alpha,
            schedule: c.schedule.clone(),
            safeguard: c.safeguard,
            noise_u: cfg.sensors.noise_u * umax,
            noise_v: cfg.sensors.noise_v,
            seed: sample_seed(cfg.seeds.coverage ^ 0xc0fe, i as u64),
        };
        let x0 = &truth.observation.positions;
        match &loaded {
            None => adaptive_loop(&dom, truth, x0, &OracleDensity { rho: truth.source.clone() }, &fc, Some(&ctx.transport), &acfg),
            Some(m) => match &m.meta.baseline {
                Some(b) => {
                    let dm = BaselineDensity { params: &m.params, ctx: &ctx, cfg: &m.meta.model, baseline: b };
                    adaptive_loop(&dom, truth, x0, &dm, &fc, Some(&ctx.transport), &acfg)
                }
                None => {
                    let dm = CnwfDensity { params: &m.params, ctx: &ctx, cfg: &m.meta.model };
                    adaptive_loop(&dom, truth, x0, &dm, &fc, Some(&ctx.transport), &acfg)
                }
            },
        }
    });
    let mode_name = loaded.as_ref().map_or("oracle".to_string(), |m| m.meta.kind.clone());
    let base = format!("coverage_{mode_name}");
    let mut outputs = Vec::new();
    let mut trials = Vec::new();
    for (i, r) in runs.into_iter().enumerate() {
        let r = r?;
        let s = summarize(&r);
        let csv = run.path(format!("{base}/trial_{i:02}.csv"));
        std::fs::create_dir_all(csv.parent().expect("has parent"))?;
        write_trajectory_csv(&csv, &r.records)?;
        outputs.push(csv);
        outputs.push(run.write_json(format!("{base}/trial_{i:02}.json"), &r)?);
        if i == 0 {
            let mut tracks: Vec<Vec<[f64; 2]>> = vec![vec![]; r.final_positions.len()];
            for rec in &r.records {
                for step in &rec.inner_positions {
                    for (t, p) in tracks.iter_mut().zip(step) {
                        t.push(*p);
                    }
                }
            }
            let svg = field_svg(&mesh, &truths[0].source, &tracks, &r.final_positions, "trial 0: true source and sensor tracks");
            outputs.push(run.write_text(format!("{base}/trial_00_tracks.svg"), &svg)?);
            let jm: Vec<(f64, f64)> = r.records.iter().map(|x| (x.k as f64, x.j_model)).collect();
            let jt: Vec<(f64, f64)> = r.records.iter().map(|x| (x.k as f64, x.j_true)).collect();
            let svg = line_chart_svg(&[("J model".into(), jm), ("J true".into(), jt)], "trial 0: coverage energy", "outer iteration", "energy", true);
            outputs.push(run.write_text(format!("{base}/trial_00_energy.svg"), &svg)?);
        }
        let improved = match (s.initial_sinkhorn, s.final_sinkhorn) {
            (Some(a), Some(b)) => Some(b <= a),
            _ => None,
        };
        trials.push(TrialSummary {
            trial: i,
            initial_sinkhorn: s.initial_sinkhorn,
            final_sinkhorn: s.final_sinkhorn,
            improved,
            initial_j_true: s.initial_j_true,
            final_j_true: s.final_j_true,
            j_true_monotone: j_true_monotone(&r),
            density_update_violations: s.density_update.violated,
            model_error_violations: s.model_error.violated,
            model_error_premise: s.model_error.premise_true,
        });
    }
    let scored: Vec<bool> = trials.iter().filter_map(|t| t.improved).collect();
    let n = trials.len().max(1) as f64;
    let report = CoverageReport {
        mode: mode_name.clone(),
        improved_fraction: (!scored.is_empty()).then(|| scored.iter().filter(|&&b| b).count() as f64 / scored.len() as f64),
        monotone_fraction: trials.iter().filter(|t| t.j_true_monotone).count() as f64 / n,
        density_update_violations: trials.iter().map(|t| t.density_update_violations).sum(),
        model_error_violations: trials.iter().map(|t| t.model_error_violations).sum(),
        trials,
    };
    println!(
        "{mode_name}: improved in {:.0}% of trials, J_true monotone in {:.0}%, {} density-update and {} model-error violations",
        100.0 * report.improved_fraction.unwrap_or(f64::NAN),
        100.0 * report.monotone_fraction,
        report.density_update_violations,
        report.model_error_violations
    );
    outputs.push(run.write_json(format!("{base}/report.json"), &report)?);
    run.manifest(&base, BTreeMap::from([("mesh".to_string(), mesh.content_hash())]), &outputs)?;
    if check {
        if report.density_update_violations > 0 || report.model_error_violations > 0 {
            return Err(Failure::Check("a descent condition was violated".into()));
        }
        match mode {
            CoverageMode::Oracle if report.monotone_fraction < 1.0 => {
                return Err(Failure::Check("true coverage energy increased under the oracle density".into()))
            }
            CoverageMode::Model if report.improved_fraction.unwrap_or(0.0) < 0.7 => {
                return Err(Failure::Check(format!(
                    "final error improved in only {:.0}% of trials",
                    100.0 * report.improved_fraction.unwrap_or(0.0)
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BumpReport {
    x_star: [f64; 2],
    initial_positions: Vec<[f64; 2]>,
    runs: Vec<ConvergenceResult>,
}

fn bump(run: &Run, check: bool) -> CmdResult {
    let cfg = &run.cfg;
    if !matches!(cfg.mesh.kind, MeshKind::Disk | MeshKind::Square) {
        return Err(Error::Validation("bump mode needs a convex domain (disk or square)".into()).into());
    }
    let (mesh, fc) = run.mesh()?;
    let b = &cfg.coverage.bump;
    let valid = ValidRegion::new(&mesh, cfg.sensors.delta);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seeds.coverage);
    let x0 = (0..cfg.sensors.n).map(|_| valid.sample(&mesh, &mut rng)).collect::<cnwf::Result<Vec<_>>>()?;
    let runs = par_map(&b.gains, run.jobs, |_, &alpha| {
        let cc = ConvergenceConfig {
            alpha,
            t_end: b.horizon / alpha,
            dt: b.dt / alpha,
            r_prime: b.r_prime,
            r_target: b.r_target,
            beta: None,
        };
        convergence_experiment(&mesh, &fc, &x0, b.x_star, &cc)
    })
    .into_iter()
    .collect::<cnwf::Result<Vec<_>>>()?;
    for r in &runs {
        println!(
            "alpha {:.3}: background {:.3e}, fitted rate {:.4} vs bound {:.4}, observed ratio {:.3}, bound {}",
            r.alpha,
            r.beta,
            r.fitted_rate,
            r.bound_rate,
            r.r_observed,
            if r.bound_ok { "holds" } else { "violated" }
        );
    }
    let series: Vec<(String, Vec<(f64, f64)>)> = runs
        .iter()
        .map(|r| (format!("alpha = {}", r.alpha), r.times.iter().copied().zip(r.m.iter().copied()).collect()))
        .collect();
    let svg = line_chart_svg(&series, "distance from nearest sensor to the peak", "t", "m(t)", true);
    let report = BumpReport { x_star: b.x_star, initial_positions: x0, runs };
    let outputs = vec![run.write_json("coverage_bump/report.json", &report)?, run.write_text("coverage_bump/rates.svg", &svg)?];
    run.manifest("coverage_bump", BTreeMap::from([("mesh".to_string(), mesh.content_hash())]), &outputs)?;
    if check && report.runs.iter().any(|r| !r.bound_ok || r.fitted_rate >= 0.0) {
        return Err(Failure::Check("exponential rate bound not met".into()));
    }
    Ok(())
}

