//! Coverage control of mobile sensors: geodesic Voronoi energies, relaxed
//! Lloyd updates, the adaptive sense-predict-move loop and monitors for its
//! descent conditions.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feec::{Cochain0, FineComplex};
use crate::forward::{sample_observations, ObservationSet, SampleTriple};
use crate::geodesy::{geodesic_voronoi, Geodesy, VoronoiPartition};
use crate::mesh::{dist, Point, TriMesh};
use crate::model::baseline::{baseline_predict, BaselineConfig};
use crate::model::ops::{density_divergence, TransportCache};
use crate::model::{cnwf_forward, ModelConfig, ModelContext, ParamSet};

/// Cell masses at or below this are treated as empty.
pub const MASS_FLOOR: f64 = 1e-14;

/// Mesh, lumped vertex weights and distance model shared by every coverage
/// computation.
pub struct CoverageDomain<'m> {
    pub mesh: &'m TriMesh,
    pub lumped: &'m [f64],
    pub geodesy: Geodesy,
}

impl<'m> CoverageDomain<'m> {
    pub fn new(mesh: &'m TriMesh, fc: &'m FineComplex, geodesy: Geodesy) -> Self {
        Self { mesh, lumped: &fc.lumped, geodesy }
    }

    pub fn partition(&self, x: &[Point]) -> Result<VoronoiPartition> {
        geodesic_voronoi(self.mesh, x, self.geodesy)
    }

    fn check_density(&self, rho: &[f64]) -> Result<()> {
        if rho.len() != self.mesh.n_vertices() {
            return Err(Error::Argument(format!("density has {} entries, mesh has {} vertices", rho.len(), self.mesh.n_vertices())));
        }
        if rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Argument("density must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// `Σ_v m_v ρ_v d(v, own generator)²` on a fixed partition.
pub fn partition_energy(dom: &CoverageDomain, part: &VoronoiPartition, rho: &[f64]) -> f64 {
    (0..rho.len()).map(|v| dom.lumped[v] * rho[v] * part.distance(v).powi(2)).sum()
}

pub fn coverage_energy(dom: &CoverageDomain, x: &[Point], rho: &[f64]) -> Result<f64> {
    dom.check_density(rho)?;
    Ok(partition_energy(dom, &dom.partition(x)?, rho))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub point: Point,
    pub mass: f64,
    /// Empty cell; the generator is returned unchanged.
    pub empty: bool,
    /// The weighted mean fell outside the cell (or the domain) and was
    /// replaced by the nearest cell vertex.
    pub projected: bool,
}

/// Density-weighted centroid of cell `g`.
pub fn cell_centroid(dom: &CoverageDomain, part: &VoronoiPartition, g: usize, generator: Point, rho: &[f64]) -> Centroid {
    let mut mass = 0.0;
    let mut c = [0.0; 2];
    for v in part.members(g) {
        let w = dom.lumped[v] * rho[v];
        let p = dom.mesh.vertex(v);
        mass += w;
        c[0] += w * p[0];
        c[1] += w * p[1];
    }
    if mass <= MASS_FLOOR {
        return Centroid { point: generator, mass, empty: true, projected: false };
    }
    let c = [c[0] / mass, c[1] / mass];
    if dom.mesh.contains(c) && part.owner(dom.mesh, c) == Some(g) {
        return Centroid { point: c, mass, empty: false, projected: false };
    }
    let nearest = part
        .members(g)
        .min_by(|&a, &b| dist(dom.mesh.vertex(a), c).total_cmp(&dist(dom.mesh.vertex(b), c)))
        .map_or(generator, |v| dom.mesh.vertex(v));
    Centroid { point: nearest, mass, empty: false, projected: true }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LloydTrace {
    /// Positions before the first and after every step (`m + 1` entries).
    pub positions: Vec<Vec<Point>>,
    /// Energy at each entry of `positions`.
    pub energies: Vec<f64>,
    pub empty_cells: usize,
    pub projected: usize,
    /// Set when a path query failed; the trace holds the steps completed so far.
    pub aborted: Option<String>,
}

impl LloydTrace {
    pub fn last(&self) -> &[Point] {
        self.positions.last().map_or(&[], |p| p.as_slice())
    }

    /// `J(x_m) - J(x_0)`.
    pub fn energy_change(&self) -> f64 {
        match (self.energies.first(), self.energies.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// `m` relaxed Lloyd steps: each sensor moves the fraction `alpha` of the
/// way along the shortest path towards its cell centroid.
pub fn discrete_lloyd(dom: &CoverageDomain, x0: &[Point], rho: &[f64], m: usize, alpha: f64) -> Result<LloydTrace> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Argument(format!("step fraction must lie in (0, 1], got {alpha}")));
    }
    if x0.is_empty() {
        return Err(Error::Argument("at least one sensor is required".into()));
    }
    dom.check_density(rho)?;
    let mut part = dom.partition(x0)?;
    let mut trace = LloydTrace {
        positions: vec![x0.to_vec()],
        energies: vec![partition_energy(dom, &part, rho)],
        ..Default::default()
    };
    let mut x = x0.to_vec();
    'outer: for _ in 0..m {
        let mut next = Vec::with_capacity(x.len());
        for (g, &xg) in x.iter().enumerate() {
            let c = cell_centroid(dom, &part, g, xg, rho);
            trace.empty_cells += c.empty as usize;
            trace.projected += c.projected as usize;
            if c.empty || dist(c.point, xg) == 0.0 {
                next.push(xg);
                continue;
            }
            match dom.geodesy.path(dom.mesh, xg, c.point).and_then(|p| p.point_along(alpha)) {
                Ok(p) => next.push(p),
                Err(e) => {
                    trace.aborted = Some(format!("sensor {g}: {e}"));
                    break 'outer;
                }
            }
        }
        part = match dom.partition(&next) {
            Ok(p) => p,
            Err(e) => {
                trace.aborted = Some(e.to_string());
                break;
            }
        };
        x = next;
        trace.energies.push(partition_energy(dom, &part, rho));
        trace.positions.push(x.clone());
    }
    Ok(trace)
}

/// Distance-model diameter estimated from up to `samples` boundary vertices.
pub fn domain_diameter(dom: &CoverageDomain, samples: usize) -> Result<f64> {
    let boundary: Vec<usize> = (0..dom.mesh.n_vertices()).filter(|&v| dom.mesh.is_boundary_vertex(v)).collect();
    if boundary.is_empty() {
        return Err(Error::Validation("mesh has no boundary vertices".into()));
    }
    let stride = boundary.len().div_ceil(samples.max(1));
    let mut diam: f64 = 0.0;
    for &s in boundary.iter().step_by(stride) {
        let f = dom.geodesy.field(dom.mesh, dom.mesh.vertex(s))?;
        diam = diam.max(boundary.iter().map(|&v| f.vertex(v)).fold(0.0, f64::max));
    }
    Ok(diam)
}

/// `N |Ω| diam²`: bounds `|J_ρ(x) - J_ρ'(x)| / ‖ρ - ρ'‖∞` for any `N` sensors.
pub fn c_omega_bound(dom: &CoverageDomain, n_sensors: usize) -> Result<f64> {
    let diam = domain_diameter(dom, 64)?;
    Ok(n_sensors as f64 * dom.mesh.total_area() * diam * diam)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Violated,
    /// The premise is false, so nothing is asserted.
    NotApplicable,
}

/// One evaluation of a sufficient descent condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    /// Left side of the premise inequality.
    pub lhs: f64,
    /// Right side of the premise inequality.
    pub rhs: f64,
    pub premise: bool,
    pub conclusion: bool,
    pub verdict: Verdict,
}

impl ConditionCheck {
    fn new(lhs: f64, rhs: f64, conclusion: bool) -> Self {
        let premise = lhs < rhs;
        let verdict = match (premise, conclusion) {
            (false, _) => Verdict::NotApplicable,
            (true, true) => Verdict::Holds,
            (true, false) => Verdict::Violated,
        };
        Self { lhs, rhs, premise, conclusion, verdict }
    }
}

/// Model-energy descent across a density update:
/// `‖ρ_{k+1} - ρ_k‖∞ < -ΔJ_Lloyd / C` implies `J_{ρ_{k+1}}(x_{k+1}) < J_{ρ_k}(x_k)`.
pub fn density_update_check(rho_change_inf: f64, lloyd_change: f64, c_omega: f64, j_before: f64, j_after: f64) -> ConditionCheck {
    ConditionCheck::new(rho_change_inf, -lloyd_change / c_omega, j_after < j_before)
}

/// True-energy descent under model error:
/// `2C ‖ρ_k - ρ_true‖∞ < -ΔJ_Lloyd` implies `J_true(x_{k+1}) < J_true(x_k)`.
pub fn model_error_check(model_error_inf: f64, lloyd_change: f64, c_omega: f64, jtrue_before: f64, jtrue_after: f64) -> ConditionCheck {
    ConditionCheck::new(2.0 * c_omega * model_error_inf, -lloyd_change, jtrue_after < jtrue_before)
}

pub fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeguardedUpdate {
    pub rho: Cochain0,
    /// Blend weight on the new density.
    pub weight: f64,
}

/// Largest blend `ρ_k + w (ρ_new - ρ_k)` whose sup-norm step stays below
/// `-ΔJ_Lloyd / C` (found by bisection to `1e-3`).
pub fn safeguarded_density_update(rho_k: &[f64], rho_new: &[f64], lloyd_change: f64, c_omega: f64) -> SafeguardedUpdate {
    let d = sup_norm_diff(rho_k, rho_new);
    let bound = -lloyd_change / c_omega;
    let blend = |w: f64| rho_k.iter().zip(rho_new).map(|(a, b)| a + w * (b - a)).collect::<Vec<_>>();
    let weight = if d == 0.0 {
        0.0
    } else if bound <= 0.0 || !bound.is_finite() {
        1.0
    } else if d < bound {
        1.0
    } else {
        // the step is linear in w, but bisection keeps it robust to rounding
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > 1e-3 {
            let mid = 0.5 * (lo + hi);
            if sup_norm_diff(rho_k, &blend(mid)) < bound {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    SafeguardedUpdate { rho: blend(weight), weight }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub iterations: usize,
    pub premise_true: usize,
    pub holds: usize,
    pub violated: usize,
    pub not_applicable: usize,
}

impl CampaignSummary {
    fn add(&mut self, c: &ConditionCheck) {
        self.iterations += 1;
        self.premise_true += c.premise as usize;
        match c.verdict {
            Verdict::Holds => self.holds += 1,
            Verdict::Violated => self.violated += 1,
            Verdict::NotApplicable => self.not_applicable += 1,
        }
    }
}

/// Random nonnegative unit-integral density built from a few Gaussian blobs
/// over a floor.
fn random_density(dom: &CoverageDomain, rng: &mut impl Rng) -> Cochain0 {
    let (lo, hi) = dom.mesh.bounds();
    let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let blobs: Vec<(Point, f64, f64)> = (0..3)
        .map(|_| {
            let c = [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
            (c, rng.random_range(0.05..0.4) * scale, rng.random_range(0.2..1.0))
        })
        .collect();
    let floor = rng.random_range(0.01..0.3);
    let mut rho: Vec<f64> = dom
        .mesh
        .vertices()
        .iter()
        .map(|&p| floor + blobs.iter().map(|&(c, s, a)| a * (-(dist(p, c) / s).powi(2)).exp()).sum::<f64>())
        .collect();
    let total: f64 = rho.iter().zip(dom.lumped).map(|(r, m)| r * m).sum();
    rho.iter_mut().for_each(|r| *r /= total);
    rho
}

/// Alternates Lloyd steps with random density perturbations sized around
/// the descent threshold and checks the density-update condition on each.
pub fn density_update_campaign(
    dom: &CoverageDomain,
    x0: &[Point],
    rho0: &[f64],
    iterations: usize,
    inner: usize,
    alpha: f64,
    seed: u64,
) -> Result<(CampaignSummary, Vec<ConditionCheck>)> {
    let c_omega = c_omega_bound(dom, x0.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rho = rho0.to_vec();
    let mut x = x0.to_vec();
    let mut summary = CampaignSummary::default();
    let mut checks = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let trace = discrete_lloyd(dom, &x, &rho, inner, alpha)?;
        if let Some(e) = &trace.aborted {
            return Err(Error::Experiment(format!("Lloyd step aborted: {e}")));
        }
        let j_before = trace.energies[0];
        let dj = trace.energy_change();
        let target = random_density(dom, &mut rng);
        let gap = sup_norm_diff(&target, &rho);
        // straddle the threshold so both premise outcomes are exercised
        let t = if dj < 0.0 && gap > 0.0 {
            (rng.random_range(0.0..2.0) * (-dj / c_omega) / gap).min(1.0)
        } else {
            rng.random_range(0.0..0.2)
        };
        let next: Vec<f64> = rho.iter().zip(&target).map(|(a, b)| a + t * (b - a)).collect();
        let x_next = trace.last().to_vec();
        let j_after = coverage_energy(dom, &x_next, &next)?;
        let check = density_update_check(sup_norm_diff(&next, &rho), dj, c_omega, j_before, j_after);
        summary.add(&check);
        checks.push(check);
        rho = next;
        x = x_next;
    }
    Ok((summary, checks))
}

/// Anything that maps an observation set to a unit-integral density.
pub trait DensityModel {
    /// Density and a flag set when the prediction degenerated to uniform.
    fn density(&self, obs: &ObservationSet) -> Result<(Cochain0, bool)>;
}

/// Returns the true density regardless of the observations.
pub struct OracleDensity {
    pub rho: Cochain0,
}

impl DensityModel for OracleDensity {
    fn density(&self, _obs: &ObservationSet) -> Result<(Cochain0, bool)> {
        Ok((self.rho.clone(), false))
    }
}

pub struct CnwfDensity<'a> {
    pub params: &'a ParamSet,
    pub ctx: &'a ModelContext<'a>,
    pub cfg: &'a ModelConfig,
}

impl DensityModel for CnwfDensity<'_> {
    fn density(&self, obs: &ObservationSet) -> Result<(Cochain0, bool)> {
        let b = cnwf_forward(obs, self.params, self.ctx, self.cfg)?;
        Ok((b.density, b.degenerate))
    }
}

pub struct BaselineDensity<'a> {
    pub params: &'a ParamSet,
    pub ctx: &'a ModelContext<'a>,
    pub cfg: &'a ModelConfig,
    pub baseline: &'a BaselineConfig,
}

impl DensityModel for BaselineDensity<'_> {
    fn density(&self, obs: &ObservationSet) -> Result<(Cochain0, bool)> {
        baseline_predict(obs, self.params, self.ctx, self.cfg, self.baseline)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateSchedule {
    /// Re-query the model at every outer iteration.
    Every,
    /// Re-query only at the listed outer iterations (plus the initial query).
    At(Vec<usize>),
}

impl UpdateSchedule {
    pub fn updates_at(&self, k: usize) -> bool {
        k == 0
            || match self {
                UpdateSchedule::Every => true,
                UpdateSchedule::At(ks) => ks.contains(&k),
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    /// Outer iterations `K`.
    pub iterations: usize,
    /// Lloyd steps per outer iteration.
    pub inner: usize,
    pub alpha: f64,
    pub schedule: UpdateSchedule,
    /// Blend model updates so the density-update condition holds.
    pub safeguard: bool,
    /// Absolute observation noise standard deviations.
    pub noise_u: f64,
    pub noise_v: f64,
    pub seed: u64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            inner: 3,
            alpha: 0.5,
            schedule: UpdateSchedule::Every,
            safeguard: false,
            noise_u: 0.0,
            noise_v: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub k: usize,
    /// Positions at the start of the iteration.
    pub positions: Vec<Point>,
    /// Inner Lloyd positions, including the start (`inner + 1` entries).
    pub inner_positions: Vec<Vec<Point>>,
    pub inner_j_model: Vec<f64>,
    pub inner_j_true: Vec<f64>,
    /// `J_{ρ_k}(x_k)`.
    pub j_model: f64,
    /// `J_true(x_k)`.
    pub j_true: f64,
    /// `J_{ρ_k}` change over the inner Lloyd steps.
    pub lloyd_change: f64,
    /// `‖ρ_k - ρ_{k-1}‖∞` (0 at the first iteration).
    pub rho_change_inf: f64,
    /// `‖ρ_k - ρ_true‖∞`.
    pub model_error_inf: f64,
    /// Model error relative to the true energy, `‖ρ_k - ρ_true‖∞ / J_true(x_k)`.
    pub error_ratio: f64,
    pub c_omega: f64,
    pub model_updated: bool,
    pub degenerate: bool,
    /// Blend weight when the safeguard is on and the model was queried.
    pub safeguard_weight: Option<f64>,
    /// Debiased Sinkhorn divergence from the true density.
    pub sinkhorn_error: Option<f64>,
    /// Density-update condition across the step into this iteration.
    pub density_update: Option<ConditionCheck>,
    /// Model-error condition over this iteration's Lloyd steps.
    pub model_error: ConditionCheck,
    /// Mean absolute field reading at the sensors.
    pub mean_reading: f64,
}

/// Mean absolute interpolated field at the sensors and the true coverage energy.
pub fn observability_metrics(dom: &CoverageDomain, u_true: &[f64], x: &[Point], rho_true: &[f64]) -> Result<(f64, f64)> {
    let mut s = 0.0;
    for (i, &p) in x.iter().enumerate() {
        s += dom
            .mesh
            .interpolate(u_true, p)
            .ok_or_else(|| Error::Lookup(format!("sensor {i} at ({:.6}, {:.6}) lies outside the mesh", p[0], p[1])))?
            .abs();
    }
    Ok((s / x.len().max(1) as f64, coverage_energy(dom, x, rho_true)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRun {
    pub records: Vec<CoverageRecord>,
    pub final_positions: Vec<Point>,
    /// Divergence of the prediction made from the final positions.
    pub final_sinkhorn: Option<f64>,
}

/// Sense, predict, move: at each outer iteration observe the true field at
/// the sensors, optionally refresh the model density, then run the inner
/// Lloyd steps against it. A last observation is taken at the final
/// positions to score where the sensors ended up.
pub fn adaptive_loop(
    dom: &CoverageDomain,
    truth: &SampleTriple,
    x0: &[Point],
    model: &dyn DensityModel,
    fc: &FineComplex,
    transport: Option<&TransportCache>,
    cfg: &AdaptiveConfig,
) -> Result<AdaptiveRun> {
    if x0.is_empty() {
        return Err(Error::Argument("at least one sensor is required".into()));
    }
    let inst = truth.instance(dom.mesh)?;
    let rho_true = &truth.source;
    let c_omega = c_omega_bound(dom, x0.len())?;
    let mut records: Vec<CoverageRecord> = Vec::with_capacity(cfg.iterations);
    let mut x = x0.to_vec();
    let mut rho: Cochain0 = Vec::new();
    for k in 0..cfg.iterations {
        let mut updated = false;
        let mut degenerate = false;
        let mut weight = None;
        let rho_prev = rho.clone();
        if cfg.schedule.updates_at(k) {
            let obs = sample_observations(dom.mesh, &truth.field, &inst, &x, cfg.noise_u, cfg.noise_v, cfg.seed.wrapping_add(k as u64))?;
            let (pred, deg) = model.density(&obs)?;
            degenerate = deg;
            updated = true;
            rho = match (cfg.safeguard, records.last()) {
                (true, Some(prev)) => {
                    let s = safeguarded_density_update(&rho_prev, &pred, prev.lloyd_change, c_omega);
                    weight = Some(s.weight);
                    s.rho
                }
                _ => pred,
            };
        }
        let trace = discrete_lloyd(dom, &x, &rho, cfg.inner, cfg.alpha)?;
        if let Some(e) = &trace.aborted {
            return Err(Error::Experiment(format!("iteration {k}: Lloyd step aborted: {e}")));
        }
        let inner_j_true = trace
            .positions
            .iter()
            .map(|p| coverage_energy(dom, p, rho_true))
            .collect::<Result<Vec<_>>>()?;
        let j_model = trace.energies[0];
        let j_true = inner_j_true[0];
        let rho_change_inf = if k == 0 { 0.0 } else { sup_norm_diff(&rho, &rho_prev) };
        let model_error_inf = sup_norm_diff(&rho, rho_true);
        let density_update = records.last().map(|prev| {
            density_update_check(rho_change_inf, prev.lloyd_change, c_omega, prev.j_model, j_model)
        });
        let model_error = model_error_check(
            model_error_inf,
            trace.energy_change(),
            c_omega,
            j_true,
            *inner_j_true.last().unwrap_or(&j_true),
        );
        let (mean_reading, _) = observability_metrics(dom, &truth.field, &x, rho_true)?;
        records.push(CoverageRecord {
            k,
            positions: x.clone(),
            inner_positions: trace.positions.clone(),
            inner_j_model: trace.energies.clone(),
            inner_j_true,
            j_model,
            j_true,
            lloyd_change: trace.energy_change(),
            rho_change_inf,
            model_error_inf,
            error_ratio: if j_true > 0.0 { model_error_inf / j_true } else { f64::INFINITY },
            c_omega,
            model_updated: updated,
            degenerate,
            safeguard_weight: weight,
            sinkhorn_error: transport.map(|t| density_divergence(fc, t, rho_true, &rho)),
            density_update,
            model_error,
            mean_reading,
        });
        x = trace.last().to_vec();
    }
    let final_sinkhorn = match (transport, records.is_empty()) {
        (Some(t), false) => {
            let k = cfg.iterations as u64;
            let obs = sample_observations(dom.mesh, &truth.field, &inst, &x, cfg.noise_u, cfg.noise_v, cfg.seed.wrapping_add(k))?;
            let (pred, _) = model.density(&obs)?;
            Some(density_divergence(fc, t, rho_true, &pred))
        }
        _ => None,
    };
    Ok(AdaptiveRun { records, final_positions: x, final_sinkhorn })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSummary {
    pub iterations: usize,
    pub model_updates: usize,
    pub degenerate: usize,
    pub density_update: CampaignSummary,
    pub model_error: CampaignSummary,
    pub initial_j_true: Option<f64>,
    pub final_j_true: Option<f64>,
    pub initial_sinkhorn: Option<f64>,
    pub final_sinkhorn: Option<f64>,
}

pub fn summarize(run: &AdaptiveRun) -> AdaptiveSummary {
    let records = &run.records;
    let mut s = AdaptiveSummary { iterations: records.len(), ..Default::default() };
    for r in records {
        s.model_updates += r.model_updated as usize;
        s.degenerate += r.degenerate as usize;
        if let Some(c) = &r.density_update {
            s.density_update.add(c);
        }
        s.model_error.add(&r.model_error);
    }
    s.initial_j_true = records.first().map(|r| r.j_true);
    s.final_j_true = records.last().map(|r| *r.inner_j_true.last().unwrap_or(&r.j_true));
    s.initial_sinkhorn = records.first().and_then(|r| r.sinkhorn_error);
    s.final_sinkhorn = run.final_sinkhorn;
    s
}

/// One CSV row per sensor per inner step:
/// `k,inner_iter,sensor_id,x,y,J_model,J_true`.
pub fn write_trajectory_csv(path: &Path, records: &[CoverageRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["k", "inner_iter", "sensor_id", "x", "y", "J_model", "J_true"]).map_err(csv_err)?;
    for r in records {
        for (j, pos) in r.inner_positions.iter().enumerate() {
            for (i, p) in pos.iter().enumerate() {
                w.serialize((r.k, j, i, p[0], p[1], r.inner_j_model[j], r.inner_j_true[j])).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        k => Error::Io(std::io::Error::other(format!("{k:?}"))),
    }
}

/// Unit-mass radial bump profile on the unit disk, `C exp(-1/(1-|y|²))`.
pub fn bump_profile(y: Point) -> f64 {
    let r2 = y[0] * y[0] + y[1] * y[1];
    if r2 >= 1.0 {
        return 0.0;
    }
    (-1.0 / (1.0 - r2)).exp() / bump_normalizer()
}

fn bump_normalizer() -> f64 {
    use std::sync::OnceLock;
    static Z: OnceLock<f64> = OnceLock::new();
    *Z.get_or_init(|| {
        // 2π ∫₀¹ r e^{-1/(1-r²)} dr by composite Simpson
        let n = 4000;
        let h = 1.0 / n as f64;
        let f = |r: f64| if r >= 1.0 { 0.0 } else { r * (-1.0 / (1.0 - r * r)).exp() };
        let s: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * f(i as f64 * h)
            })
            .sum();
        2.0 * PI * s * h / 3.0
    })
}

/// Mass of the profile in the angular sector `[theta, theta + width]`.
/// Radial symmetry makes this `width / 2π`.
pub fn sector_mass(theta: f64, width: f64, quad: &PolarQuadrature) -> f64 {
    quad.nodes
        .iter()
        .zip(&quad.weights)
        .filter(|(y, _)| {
            let a = (y[1].atan2(y[0]) - theta).rem_euclid(2.0 * PI);
            a <= width
        })
        .map(|(_, w)| w)
        .sum()
}

/// Midpoint polar rule for the bump profile on the unit disk, weights
/// normalized to sum to one.
#[derive(Debug, Clone)]
pub struct PolarQuadrature {
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
}

impl PolarQuadrature {
    pub fn new(n_r: usize, n_theta: usize) -> Self {
        let mut nodes = Vec::with_capacity(n_r * n_theta);
        let mut weights = Vec::with_capacity(n_r * n_theta);
        for i in 0..n_r {
            let r = (i as f64 + 0.5) / n_r as f64;
            for j in 0..n_theta {
                let t = 2.0 * PI * (j as f64 + 0.5) / n_theta as f64;
                let y = [r * t.cos(), r * t.sin()];
                nodes.push(y);
                weights.push(r * bump_profile(y));
            }
        }
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        Self { nodes, weights }
    }
}

/// Importance density concentrated at `x_star`: a bump of support radius
/// `r' m(X)` (with `m(X)` the distance from `x_star` to the nearest sensor)
/// over a constant background `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpImportanceModel {
    pub x_star: Point,
    pub r_prime: f64,
    pub beta: f64,
}

impl BumpImportanceModel {
    pub fn nearest_distance(&self, x: &[Point]) -> f64 {
        x.iter().map(|&p| dist(p, self.x_star)).fold(f64::INFINITY, f64::min)
    }
}

/// Nodal unit-integral density of the bump model on the mesh. When a sensor
/// sits at `x_star` the bump degenerates to a point mass at the nearest vertex.
pub fn bump_importance(model: &BumpImportanceModel, mesh: &TriMesh, fc: &FineComplex, x: &[Point]) -> Result<Cochain0> {
    if !(model.r_prime > 0.0 && model.r_prime < 1.0 && model.beta >= 0.0) {
        return Err(Error::Argument("bump radius factor must lie in (0, 1) and background must be nonnegative".into()));
    }
    let m = model.nearest_distance(x);
    let mut rho = vec![0.0; mesh.n_vertices()];
    if m < 1e-14 {
        let v = mesh.nearest_vertex(model.x_star);
        rho[v] = 1.0 / fc.lumped[v];
        return Ok(rho);
    }
    let s = model.r_prime * m;
    for (v, &p) in mesh.vertices().iter().enumerate() {
        let y = [(p[0] - model.x_star[0]) / s, (p[1] - model.x_star[1]) / s];
        rho[v] = if y[0] * y[0] + y[1] * y[1] < 1.0 { bump_profile(y) / (s * s) } else { model.beta };
    }
    let total = fc.integrate(&rho);
    if total <= 0.0 {
        return Err(Error::Validation("bump support contains no mesh vertex and the background is zero".into()));
    }
    rho.iter_mut().for_each(|r| *r /= total);
    Ok(rho)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    /// Gain of `ẋ = -α (x - c(x))`.
    pub alpha: f64,
    pub t_end: f64,
    /// Euler step; clamped to `0.1 / α`.
    pub dt: f64,
    pub r_prime: f64,
    /// Contraction factor the background must achieve on the validation grid.
    pub r_target: f64,
    /// Fixed background; found by bisection when `None`.
    pub beta: Option<f64>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { alpha: 1.0, t_end: 3.0, dt: 0.01, r_prime: 0.5, r_target: 0.75, beta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub alpha: f64,
    pub beta: f64,
    pub r_target: f64,
    /// Largest `|c - x*| / m` seen along the trajectory.
    pub r_observed: f64,
    /// `1/2π` for the radial profile, checked numerically.
    pub sector_constant: f64,
    pub times: Vec<f64>,
    pub m: Vec<f64>,
    /// Least-squares slope of `ln m(t)`.
    pub fitted_rate: f64,
    /// `α (r - 1)`.
    pub bound_rate: f64,
    /// `m(T) ≤ 1.05 m(0) e^{α(r-1)T}`.
    pub bound_ok: bool,
}

/// Evaluates the centroid map of the bump model with a mesh-independent
/// quadrature: the bump by a polar rule around `x*`, the background by the
/// lumped vertex weights outside the bump support.
struct BumpCentroids<'a> {
    mesh: &'a TriMesh,
    lumped: &'a [f64],
    quad: &'a PolarQuadrature,
    x_star: Point,
    r_prime: f64,
}

impl BumpCentroids<'_> {
    fn nearest(x: &[Point], p: Point) -> usize {
        (0..x.len()).min_by(|&a, &b| dist(x[a], p).total_cmp(&dist(x[b], p))).unwrap_or(0)
    }

    fn centroids(&self, x: &[Point], beta: f64) -> Vec<Point> {
        let m = x.iter().map(|&p| dist(p, self.x_star)).fold(f64::INFINITY, f64::min);
        let s = self.r_prime * m;
        let mut acc = vec![[0.0; 3]; x.len()];
        for (y, &w) in self.quad.nodes.iter().zip(&self.quad.weights) {
            let p = [self.x_star[0] + s * y[0], self.x_star[1] + s * y[1]];
            let a = &mut acc[Self::nearest(x, p)];
            a[0] += w;
            a[1] += w * p[0];
            a[2] += w * p[1];
        }
        if beta > 0.0 {
            for (v, &p) in self.mesh.vertices().iter().enumerate() {
                if dist(p, self.x_star) < s {
                    continue;
                }
                let w = beta * self.lumped[v];
                let a = &mut acc[Self::nearest(x, p)];
                a[0] += w;
                a[1] += w * p[0];
                a[2] += w * p[1];
            }
        }
        x.iter()
            .zip(&acc)
            .map(|(&g, a)| if a[0] > MASS_FLOOR { [a[1] / a[0], a[2] / a[0]] } else { g })
            .collect()
    }

    /// `|c_n - x*| / m` for the sensor nearest to `x*`.
    fn ratio(&self, x: &[Point], beta: f64) -> f64 {
        let n = Self::nearest(x, self.x_star);
        let m = dist(x[n], self.x_star);
        dist(self.centroids(x, beta)[n], self.x_star) / m
    }
}

/// Exponential approach of the nearest sensor to the importance peak under
/// the continuous-time Lloyd flow, integrated by explicit Euler on a convex
/// domain with Euclidean distances.
pub fn convergence_experiment(
    mesh: &TriMesh,
    fc: &FineComplex,
    x0: &[Point],
    x_star: Point,
    cfg: &ConvergenceConfig,
) -> Result<ConvergenceResult> {
    if !(cfg.alpha > 0.0 && cfg.t_end > 0.0 && cfg.dt > 0.0) {
        return Err(Error::Argument("gain, horizon and step must be positive".into()));
    }
    if !(cfg.r_prime > 0.0 && cfg.r_prime < cfg.r_target && cfg.r_target < 1.0) {
        return Err(Error::Argument("need 0 < r' < r < 1".into()));
    }
    if x0.is_empty() || !mesh.contains(x_star) || x0.iter().any(|&p| !mesh.contains(p)) {
        return Err(Error::Argument("sensors and peak must lie in the domain".into()));
    }
    let quad = PolarQuadrature::new(40, 64);
    let bc = BumpCentroids { mesh, lumped: &fc.lumped, quad: &quad, x_star, r_prime: cfg.r_prime };
    let m0 = x0.iter().map(|&p| dist(p, x_star)).fold(f64::INFINITY, f64::min);
    if m0 <= 0.0 {
        return Err(Error::Argument("a sensor already sits at the peak".into()));
    }
    let n0 = BumpCentroids::nearest(x0, x_star);

    // validation grid: displace the nearest sensor around x* over the range
    // of distances the flow can reach
    let m_lo = m0 * (-2.0 * cfg.alpha * cfg.t_end).exp();
    let mut grid = Vec::new();
    for i in 0..8 {
        let m = m_lo * (m0 / m_lo).powf(i as f64 / 7.0);
        for j in 0..16 {
            let t = 2.0 * PI * j as f64 / 16.0;
            let p = [x_star[0] + m * t.cos(), x_star[1] + m * t.sin()];
            if !mesh.contains(p) {
                continue;
            }
            let mut x = x0.to_vec();
            x[n0] = p;
            if BumpCentroids::nearest(&x, x_star) == n0 {
                grid.push(x);
            }
        }
    }
    let worst = |beta: f64| grid.iter().map(|x| bc.ratio(x, beta)).fold(0.0, f64::max);
    let beta = match cfg.beta {
        Some(b) => b,
        None => {
            if worst(0.0) > cfg.r_target {
                return Err(Error::Experiment("centroid ratio exceeds the target even without background".into()));
            }
            // largest background in [1e-16, 1] meeting the target, on a log scale
            let (mut lo, mut hi) = (-16.0_f64, 0.0_f64);
            if worst(1.0) <= cfg.r_target {
                lo = 0.0;
            } else {
                for _ in 0..30 {
                    let mid = 0.5 * (lo + hi);
                    if worst(10f64.powf(mid)) <= cfg.r_target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            10f64.powf(lo)
        }
    };

    let dt = cfg.dt.min(0.1 / cfg.alpha);
    let steps = (cfg.t_end / dt).ceil() as usize;
    let mut x = x0.to_vec();
    let mut times = vec![0.0];
    let mut ms = vec![m0];
    let mut r_observed: f64 = 0.0;
    for s in 1..=steps {
        let m = ms[ms.len() - 1];
        if m < 1e-14 {
            break;
        }
        let c = bc.centroids(&x, beta);
        let n = BumpCentroids::nearest(&x, x_star);
        r_observed = r_observed.max(dist(c[n], x_star) / m);
        for (p, c) in x.iter_mut().zip(&c) {
            p[0] -= cfg.alpha * dt * (p[0] - c[0]);
            p[1] -= cfg.alpha * dt * (p[1] - c[1]);
        }
        times.push(s as f64 * dt);
        ms.push(x.iter().map(|&p| dist(p, x_star)).fold(f64::INFINITY, f64::min));
    }
    if ms.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12)) {
        return Err(Error::Experiment(format!("distance to the peak is not monotone: {ms:?}")));
    }
    let (t_fit, l_fit): (Vec<f64>, Vec<f64>) =
        times.iter().zip(&ms).filter(|(_, &m)| m > 0.0).map(|(&t, &m)| (t, m.ln())).unzip();
    let nf = t_fit.len() as f64;
    let tm = t_fit.iter().sum::<f64>() / nf;
    let lm = l_fit.iter().sum::<f64>() / nf;
    let sxy: f64 = t_fit.iter().zip(&l_fit).map(|(t, l)| (t - tm) * (l - lm)).sum();
    let sxx: f64 = t_fit.iter().map(|t| (t - tm).powi(2)).sum();
    let fitted_rate = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let bound_rate = cfg.alpha * (cfg.r_target - 1.0);
    let t_final = *times.last().unwrap_or(&0.0);
    let bound_ok = *ms.last().unwrap_or(&m0) <= 1.05 * m0 * (bound_rate * t_final).exp();
    Ok(ConvergenceResult {
        alpha: cfg.alpha,
        beta,
        r_target: cfg.r_target,
        r_observed,
        sector_constant: sector_mass(0.3, PI / 2.0, &quad) / (PI / 2.0),
        times,
        m: ms,
        fitted_rate,
        bound_rate,
        bound_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_disk_mesh, generate_l_mesh};

    fn disk(h: f64) -> (TriMesh, FineComplex) {
        let mesh = generate_disk_mesh(1.0, h).unwrap();
        let fc = FineComplex::assemble(&mesh).unwrap();
        (mesh, fc)
    }

    fn uniform(fc: &FineComplex) -> Vec<f64> {
        let a: f64 = fc.lumped.iter().sum();
        vec![1.0 / a; fc.lumped.len()]
    }

    #[test]
    fn single_center_sensor_energy() {
        let (mesh, fc) = disk(0.05);
        let dom = CoverageDomain::new(&mesh, &fc, Geodesy::Euclidean);
        let j = coverage_energy(&dom, &[[0.0, 0.0]], &uniform(&fc)).unwrap();
        // ∫ r² dA / π over the unit disk
        assert!((j - 0.5).abs() < 0.015, "{j}");
    }

    #[test]
    fn adding_a_sensor_never_increases_energy() {
        let (mesh, fc) = disk(0.1);
        let dom = CoverageDomain::new(&mesh, &fc, Geodesy::Geodesic);
        let rho = uniform(&fc);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = vec![[0.1, -0.2]];
        let mut j = coverage_energy(&dom, &x, &rho).unwrap();
        for _ in 0..5 {
            let r: f64 = rng.random_range(0.0..0.9);
            let t: f64 = rng.random_range(0.0..2.0 * PI);
            x.push([r * t.cos(), r * t.sin()]);
            let jn = coverage_energy(&dom, &x, &rho).unwrap();
            assert!(jn <= j + 1e-12);
            j = jn;
        }
    }

    #[test]
    fn point_mass_at_a_sensor_has_zero_energy() {
        let (mesh, fc) = disk(0.1);
        let dom = CoverageDomain::new(&mesh, &fc, Geodesy::Geodesic);
        let v = mesh.nearest_vertex([0.3, 0.2]);
        let mut rho = vec![0.0; mesh.n_vertices()];
        rho[v] = 1.0 / fc.lumped[v];
        let j = coverage_energy(&dom, &[mesh.vertex(v), [-0.5, 0.0]], &rho).unwrap();
        assert!(j.abs() < 1e-12);
    }

    #[test]
    fn lloyd_descends_and_validates() {
        let (mesh, fc) = disk(0.1);
        let dom = CoverageDomain::new(&mesh, &fc, Geodesy::Euclidean);
        let rho = uniform(&fc);
        let x0 = vec![[0.1, 0.1], [0.15, 0.05], [0.05, 0.2]];
        let t = discrete_lloyd(&dom, &x0, &rho, 10, 0.5).unwrap();
        assert_eq!(t.positions.len(), 11);
        assert!(t.energies.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let t0 = discrete_lloyd(&dom, &x0, &rho, 0, 0.5).unwrap();
        assert_eq!(t0.last(), &x0[..]);
        assert!(discrete_lloyd(&dom, &x0, &rho, 1, 0.0).is_err());
        assert!(discrete_lloyd(&dom, &x0, &rho, 1, 1.5).is_err());
    }

    #[test]
    fn l_shape_centroid_projects_into_cell() {
        let mesh = generate_l_mesh(0.1).unwrap();
        let fc = FineComplex::assemble(&mesh).unwrap();
        let dom = CoverageDomain::new(&mesh, &fc, Geodesy::Geodesic);
        let rho = uniform(&fc);
        // a single generator owns the whole L; its Euclidean centroid lies
        // off the domain or at least must end up inside
        let x = [mesh.vertex(mesh.nearest_vertex([0.5, 0.5]))];
        let part = dom.partition(&x).unwrap();
        let c = cell_centroid(&dom, &part, 0, x[0], &rho);
        assert!(mesh.contains(c.point));
        assert!(!c.empty);
    }

    #[test]
    fn c_omega_bounds_energy_differences() {
        let (mesh, fc) = disk(0.1);
        let dom = CoverageDomain::new(&mesh, &fc, Geodesy::Euclidean);
        let c = c_omega_bound(&dom, 1).unwrap();
        assert!(c <= 4.0 * PI + 1e-9 && c > 3.0 * PI, "{c}");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_density(&dom, &mut rng);
            let b = random_density(&dom, &mut rng);
            let x = [[rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]];
            let d = (coverage_energy(&dom, &x, &a).unwrap() - coverage_energy(&dom, &x, &b).unwrap()).abs();
            assert!(d <= c * sup_norm_diff(&a, &b) + 1e-12);
        }
    }

    #[test]
    fn safeguard_cases() {
        let a = vec![1.0, 1.0];
        let b = vec![3.0, 1.0];
        assert_eq!(safeguarded_density_update(&a, &a, -1.0, 1.0).weight, 0.0);
        assert_eq!(safeguarded_density_update(&a, &b, 0.0, 1.0).weight, 1.0);
        assert_eq!(safeguarded_density_update(&a, &b, -10.0, 1.0).weight, 1.0);
        let s = safeguarded_density_update(&a, &b, -1.0, 1.0);
        assert!((s.weight - 0.5).abs() < 1e-3 && s.weight < 0.5);
        assert!(sup_norm_diff(&s.rho, &a) < 1.0);
    }

    #[test]
    fn condition_verdicts() {
        assert_eq!(density_update_check(0.1, -1.0, 1.0, 2.0, 1.0).verdict, Verdict::Holds);
        assert_eq!(density_update_check(0.1, -1.0, 1.0, 2.0, 3.0).verdict, Verdict::Violated);
        assert_eq!(density_update_check(2.0, -1.0, 1.0, 2.0, 1.0).verdict, Verdict::NotApplicable);
        assert_eq!(density_update_check(0.0, 0.0, 1.0, 2.0, 1.0).verdict, Verdict::NotApplicable);
        assert_eq!(model_error_check(0.1, -1.0, 1.0, 2.0, 1.0).verdict, Verdict::Holds);
        assert_eq!(model_error_check(1.0, -1.0, 1.0, 2.0, 1.0).verdict, Verdict::NotApplicable);
    }

    #[test]
    fn campaign_finds_no_counterexamples() {
        let (mesh, fc) = disk(0.15);
        let dom = CoverageDomain::new(&mesh, &fc, Geodesy::Euclidean);
        let x0 = vec![[0.1, 0.0], [0.0, 0.1], [-0.1, -0.1]];
        let (s, _) = density_update_campaign(&dom, &x0, &uniform(&fc), 30, 1, 0.5, 4).unwrap();
        assert_eq!(s.violated, 0);
        assert!(s.premise_true > 0);
    }

    #[test]
    fn adaptive_loop_with_oracle() {
        use crate::forward::{generate_dataset, DatasetConfig};
        let (mesh, fc) = disk(0.15);
        let dom = CoverageDomain::new(&mesh, &fc, Geodesy::Geodesic);
        let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 1, ..Default::default() }, 2).unwrap();
        let truth = &data.samples[0];
        let oracle = OracleDensity { rho: truth.source.clone() };
        let x0 = truth.observation.positions.clone();
        let cfg = AdaptiveConfig { iterations: 4, inner: 2, ..Default::default() };
        let recs = adaptive_loop(&dom, truth, &x0, &oracle, &fc, None, &cfg).unwrap().records;
        assert_eq!(recs.len(), 4);
        assert!(recs.iter().all(|r| r.model_error_inf == 0.0 && r.model_updated));
        assert!(recs.last().unwrap().j_true <= recs[0].j_true + 1e-12);
        let empty = adaptive_loop(&dom, truth, &x0, &oracle, &fc, None, &AdaptiveConfig { iterations: 0, ..cfg.clone() }).unwrap();
        assert!(empty.records.is_empty() && empty.final_sinkhorn.is_none());
        let dir = std::env::temp_dir().join(format!("cnwf-cov-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("traj.csv");
        write_trajectory_csv(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * 3 * x0.len());
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn bump_support_scales_with_distance() {
        let (mesh, fc) = disk(0.03);
        let model = BumpImportanceModel { x_star: [0.0, 0.0], r_prime: 0.5, beta: 0.0 };
        let far = bump_importance(&model, &mesh, &fc, &[[0.6, 0.0]]).unwrap();
        let near = bump_importance(&model, &mesh, &fc, &[[0.3, 0.0]]).unwrap();
        let peak = |r: &[f64]| r.iter().copied().fold(0.0, f64::max);
        assert!((peak(&near) / peak(&far) - 4.0).abs() < 0.5);
        let support = |r: &[f64]| mesh.vertices().iter().zip(r).filter(|(_, &v)| v > 0.0).map(|(p, _)| dist(*p, [0.0, 0.0])).fold(0.0, f64::max);
        assert!(support(&near) < 0.15 + 1e-9 && support(&far) < 0.3 + 1e-9 && support(&far) > 0.2);
        let dirac = bump_importance(&model, &mesh, &fc, &[[0.0, 0.0]]).unwrap();
        assert_eq!(dirac.iter().filter(|&&v| v > 0.0).count(), 1);
        assert!((fc.integrate(&dirac) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn profile_is_a_unit_radial_density() {
        let q = PolarQuadrature::new(40, 64);
        assert!((sector_mass(0.7, PI / 3.0, &q) - 1.0 / 6.0).abs() < 1e-2);
        let (mut s, n) = (0.0, 400);
        let h = 2.0 / n as f64;
        for i in 0..n {
            for j in 0..n {
                s += bump_profile([-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h]) * h * h;
            }
        }
        assert!((s - 1.0).abs() < 1e-3, "{s}");
    }

    #[test]
    fn nearest_sensor_converges_exponentially() {
        let (mesh, fc) = disk(0.1);
        let x0 = vec![[0.4, 0.1], [-0.5, 0.3], [0.0, -0.6]];
        let res = convergence_experiment(&mesh, &fc, &x0, [0.3, 0.3], &ConvergenceConfig::default()).unwrap();
        assert!(res.bound_ok, "{res:?}");
        assert!(res.r_observed <= res.r_target + 1e-9);
        assert!(res.fitted_rate <= res.bound_rate + 1e-3);
        assert!((res.sector_constant - 1.0 / (2.0 * PI)).abs() < 1e-2);
        let bad = ConvergenceConfig { r_prime: 0.8, r_target: 0.7, ..Default::default() };
        assert!(convergence_experiment(&mesh, &fc, &x0, [0.3, 0.3], &bad).is_err());
    }
}
