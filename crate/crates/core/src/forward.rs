//! Ground-truth data: the fine-scale steady advection–diffusion solve,
//! bump sources, velocity fields, noisy point observations and the rolling
//! training cache.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feec::{Cochain0, FineComplex};
use crate::mesh::{dist, dot, norm, sha256_hex, Point, TriMesh};
use crate::quadrature::quadrature;
use crate::sparse::{norm2, SparseLu, TripletBuilder};

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub peclet: f64,
    /// Per-vertex velocity, max norm 1 (or identically zero).
    pub velocity: Vec<Point>,
    pub source: Cochain0,
    /// Dirichlet value per vertex; `None` off the Dirichlet set.
    pub dirichlet: Vec<Option<f64>>,
}

impl ProblemInstance {
    /// Homogeneous Dirichlet data on the mesh's Dirichlet set; the remaining
    /// boundary edges carry the natural zero-flux condition.
    pub fn new(mesh: &TriMesh, peclet: f64, velocity: Vec<Point>, source: Cochain0) -> Result<Self> {
        if !(peclet > 0.0) {
            return Err(Error::Argument(format!("Péclet number must be positive, got {peclet}")));
        }
        if velocity.len() != mesh.n_vertices() || source.len() != mesh.n_vertices() {
            return Err(Error::Argument("velocity/source length must match vertex count".into()));
        }
        if let Some(i) = source.iter().position(|&f| f < 0.0) {
            return Err(Error::Validation(format!("negative source value at vertex {i}")));
        }
        let dirichlet = mesh
            .dirichlet_flags()
            .iter()
            .map(|&b| if b { Some(0.0) } else { None })
            .collect();
        Ok(Self {
            peclet,
            velocity: normalize_velocity(velocity),
            source,
            dirichlet,
        })
    }

    /// Boundary edges without Dirichlet data at both ends.
    pub fn neumann_edges(&self, mesh: &TriMesh) -> Vec<usize> {
        mesh.edges()
            .iter()
            .enumerate()
            .filter(|&(e, &[a, b])| {
                mesh.boundary_edge_flags()[e] && (self.dirichlet[a].is_none() || self.dirichlet[b].is_none())
            })
            .map(|(e, _)| e)
            .collect()
    }
}

/// Scales a velocity field to unit max norm; a zero field is returned as is.
pub fn normalize_velocity(mut v: Vec<Point>) -> Vec<Point> {
    let m = v.iter().fold(0.0f64, |m, p| m.max(norm(*p)));
    if m > 0.0 {
        for p in &mut v {
            p[0] /= m;
            p[1] /= m;
        }
    }
    v
}

pub fn uniform_velocity(mesh: &TriMesh, angle: f64) -> Vec<Point> {
    vec![[angle.cos(), angle.sin()]; mesh.n_vertices()]
}

/// `v = (∂ψ/∂y, −∂ψ/∂x)` by central differences, normalized.
pub fn stream_function_velocity(mesh: &TriMesh, psi: impl Fn(Point) -> f64) -> Vec<Point> {
    let h = 1e-6 * (1.0 + mesh.max_edge_length());
    let v = mesh
        .vertices()
        .iter()
        .map(|&[x, y]| {
            let dy = (psi([x, y + h]) - psi([x, y - h])) / (2.0 * h);
            let dx = (psi([x + h, y]) - psi([x - h, y])) / (2.0 * h);
            [dy, -dx]
        })
        .collect();
    normalize_velocity(v)
}

/// Reads `vx vy` per line in vertex order.
pub fn load_velocity(path: impl AsRef<Path>, n_vertices: usize) -> Result<Vec<Point>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::with_capacity(n_vertices);
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: ln + 1, msg: e.to_string() })?;
        if vals.len() != 2 {
            return Err(Error::Parse {
                line: ln + 1,
                msg: format!("expected 2 values, found {}", vals.len()),
            });
        }
        out.push([vals[0], vals[1]]);
    }
    if out.len() != n_vertices {
        return Err(Error::Validation(format!(
            "velocity file has {} rows, mesh has {n_vertices} vertices",
            out.len()
        )));
    }
    Ok(normalize_velocity(out))
}

/// Compactly supported bump `exp(−r²/(r² − ‖x − c‖²))`; `e⁻¹` at the centre.
pub fn bump_value(x: Point, center: Point, r: f64) -> f64 {
    let d2 = {
        let d = dist(x, center);
        d * d
    };
    let r2 = r * r;
    if d2 >= r2 {
        0.0
    } else {
        (-r2 / (r2 - d2)).exp()
    }
}

pub fn bump_source(center: Point, r: f64, mesh: &TriMesh) -> Cochain0 {
    mesh.vertices().iter().map(|&x| bump_value(x, center, r)).collect()
}

/// Degeneracy floor relative to the domain area.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Unit-integral density from a nonnegative nodal field. Returns the density
/// and a flag set when the integral fell below the floor and the uniform
/// density was substituted.
pub fn normalize_density(f: &[f64], mesh: &TriMesh, fc: &FineComplex) -> Result<(Cochain0, bool)> {
    if let Some(i) = f.iter().position(|&v| v < -1e-12) {
        return Err(Error::Validation(format!("negative density value {} at vertex {i}", f[i])));
    }
    let area = mesh.total_area();
    let f: Vec<f64> = f.iter().map(|&v| v.max(0.0)).collect();
    let mass = fc.integrate(&f);
    if mass < DENSITY_FLOOR * area {
        return Ok((vec![1.0 / area; f.len()], true));
    }
    Ok((f.iter().map(|v| v / mass).collect(), false))
}

/// Documented tolerance for SUPG over/undershoot, relative to `max u`: the
/// scheme is not monotone, so the discrete maximum principle only holds
/// approximately near sharp layers.
pub const SUPG_UNDERSHOOT_TOL: f64 = 0.1;

/// SUPG parameter with the standard Péclet limiter.
fn supg_tau(h: f64, speed: f64, peclet: f64) -> f64 {
    if speed <= 0.0 {
        return 0.0;
    }
    let pe_t = 0.5 * speed * h * peclet;
    let xi = if pe_t > 20.0 {
        1.0 - 1.0 / pe_t
    } else if pe_t < 1e-6 {
        pe_t / 3.0
    } else {
        1.0 / pe_t.tanh() - 1.0 / pe_t
    };
    h / (2.0 * speed) * xi
}

/// Solves `−(1/Pe)Δu + v·∇u = f` with SUPG stabilization.
pub fn solve_advection_diffusion(mesh: &TriMesh, fc: &FineComplex, inst: &ProblemInstance) -> Result<Cochain0> {
    solve_with_velocity(mesh, fc, inst, &inst.velocity)
}

fn solve_with_velocity(mesh: &TriMesh, fc: &FineComplex, inst: &ProblemInstance, vel: &[Point]) -> Result<Cochain0> {
    let n = mesh.n_vertices();
    if inst.dirichlet.iter().all(|d| d.is_none()) {
        return Err(Error::Singular("empty Dirichlet set: problem is not well posed".into()));
    }
    let kappa = 1.0 / inst.peclet;
    let rule = quadrature(2)?;
    let mut b = TripletBuilder::with_capacity(n, n, 9 * mesh.n_triangles());
    let mut rhs = fc.m0.mul_vec(&inst.source);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.area(t);
        let g = mesh.bary_gradients(t);
        let p = mesh.triangle_points(t);
        let h = (0..3).map(|k| dist(p[k], p[(k + 1) % 3])).fold(0.0, f64::max);
        let vbar = [
            (vel[tri[0]][0] + vel[tri[1]][0] + vel[tri[2]][0]) / 3.0,
            (vel[tri[0]][1] + vel[tri[1]][1] + vel[tri[2]][1]) / 3.0,
        ];
        let tau = supg_tau(h, norm(vbar), inst.peclet);
        let mut local = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                local[i][j] = kappa * area * dot(g[i], g[j]);
            }
        }
        for (l, w) in rule.iter() {
            let wq = w * area;
            let v = [
                l[0] * vel[tri[0]][0] + l[1] * vel[tri[1]][0] + l[2] * vel[tri[2]][0],
                l[0] * vel[tri[0]][1] + l[1] * vel[tri[1]][1] + l[2] * vel[tri[2]][1],
            ];
            let f = l[0] * inst.source[tri[0]] + l[1] * inst.source[tri[1]] + l[2] * inst.source[tri[2]];
            let vg: [f64; 3] = std::array::from_fn(|k| dot(v, g[k]));
            for i in 0..3 {
                let test = l[i] + tau * vg[i];
                for j in 0..3 {
                    local[i][j] += wq * test * vg[j];
                }
                rhs[tri[i]] += wq * tau * vg[i] * f;
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                b.push(tri[i], tri[j], local[i][j]);
            }
        }
    }
    let mut a = b.build();
    for (i, d) in inst.dirichlet.iter().enumerate() {
        if let Some(g) = d {
            a.set_identity_row(i);
            rhs[i] = *g;
        }
    }
    let lu = SparseLu::factor(&a)?;
    let u = lu.solve(&rhs);
    let r: Vec<f64> = a.mul_vec(&u).iter().zip(&rhs).map(|(x, y)| x - y).collect();
    let (rn, bn) = (norm2(&r), norm2(&rhs));
    if rn > 1e-10 * bn.max(f64::MIN_POSITIVE) && rn > 1e-300 {
        return Err(Error::Singular(format!("direct solve residual {rn:.3e} exceeds tolerance (rhs {bn:.3e})")));
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearAdvection {
    /// Velocity is switched off where `u < threshold`.
    pub threshold: f64,
    /// Above the threshold the velocity is `v₀·gain·u`.
    pub gain: f64,
}

pub const PICARD_MAX_ITER: usize = 200;
pub const PICARD_TOL: f64 = 1e-8;

/// Picard iteration for the state-dependent advection variant. Converged
/// when the relative change of the undamped update is below [`PICARD_TOL`].
pub fn solve_nonlinear_advection(
    mesh: &TriMesh,
    fc: &FineComplex,
    inst: &ProblemInstance,
    nl: NonlinearAdvection,
) -> Result<Cochain0> {
    if !(nl.threshold > 0.0) {
        return Err(Error::Argument("nonlinear threshold must be positive".into()));
    }
    let velocity_of = |u: &[f64]| -> Vec<Point> {
        inst.velocity
            .iter()
            .zip(u)
            .map(|(v0, &u)| {
                if u < nl.threshold {
                    [0.0, 0.0]
                } else {
                    [v0[0] * nl.gain * u, v0[1] * nl.gain * u]
                }
            })
            .collect()
    };
    let mut u = vec![0.0; mesh.n_vertices()];
    let mut history: Vec<f64> = Vec::new();
    // damping is halved whenever the fixed-point residual stops contracting
    let mut omega: f64 = 1.0;
    for it in 0..PICARD_MAX_ITER {
        let next = solve_with_velocity(mesh, fc, inst, &velocity_of(&u))?;
        let diff: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let scale = norm2(&next);
        if scale == 0.0 {
            return Ok(next);
        }
        let rel = norm2(&diff) / scale;
        if rel <= PICARD_TOL {
            log::debug!("picard converged in {} iterations", it + 1);
            return Ok(next);
        }
        if history.last().is_some_and(|&prev| rel > 0.95 * prev) {
            omega = (omega * 0.5).max(1.0 / 64.0);
        }
        history.push(rel);
        u.iter_mut().zip(&next).for_each(|(u, n)| *u += omega * (n - *u));
    }
    Err(Error::NonConvergence {
        iterations: PICARD_MAX_ITER,
        residual: *history.last().unwrap_or(&f64::NAN),
        last: u,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub positions: Vec<Point>,
    pub u: Vec<f64>,
    pub v: Vec<Point>,
    pub peclet: f64,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            u: perm.iter().map(|&i| self.u[i]).collect(),
            v: perm.iter().map(|&i| self.v[i]).collect(),
            peclet: self.peclet,
        }
    }
}

/// Interpolates the field and velocity at each position and adds Gaussian
/// noise with the given absolute standard deviations.
pub fn sample_observations(
    mesh: &TriMesh,
    u: &[f64],
    inst: &ProblemInstance,
    positions: &[Point],
    noise_std_u: f64,
    noise_std_v: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if !(noise_std_u >= 0.0 && noise_std_v >= 0.0) {
        return Err(Error::Argument("noise standard deviations must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = Normal::new(0.0, noise_std_u).map_err(|e| Error::Argument(e.to_string()))?;
    let nv = Normal::new(0.0, noise_std_v).map_err(|e| Error::Argument(e.to_string()))?;
    let vx: Vec<f64> = inst.velocity.iter().map(|v| v[0]).collect();
    let vy: Vec<f64> = inst.velocity.iter().map(|v| v[1]).collect();
    let mut obs = ObservationSet {
        positions: positions.to_vec(),
        u: Vec::with_capacity(positions.len()),
        v: Vec::with_capacity(positions.len()),
        peclet: inst.peclet,
    };
    for (i, &p) in positions.iter().enumerate() {
        let loc = mesh
            .locate(p)
            .ok_or_else(|| Error::Lookup(format!("sensor {i} at ({:.6}, {:.6}) lies outside the mesh", p[0], p[1])))?;
        obs.u.push(mesh.interpolate_at(u, &loc) + nu.sample(&mut rng));
        obs.v.push([
            mesh.interpolate_at(&vx, &loc) + nv.sample(&mut rng),
            mesh.interpolate_at(&vy, &loc) + nv.sample(&mut rng),
        ]);
    }
    Ok(obs)
}

/// Points farther than `delta` from the boundary.
#[derive(Debug, Clone)]
pub struct ValidRegion {
    pub boundary_distance: Vec<f64>,
    pub delta: f64,
}

impl ValidRegion {
    pub fn new(mesh: &TriMesh, delta: f64) -> Self {
        Self {
            boundary_distance: mesh.boundary_distance_field(),
            delta,
        }
    }

    pub fn contains(&self, mesh: &TriMesh, p: Point) -> bool {
        mesh.interpolate(&self.boundary_distance, p)
            .is_some_and(|d| d > self.delta)
    }

    /// Uniform sample by rejection from the bounding box.
    pub fn sample(&self, mesh: &TriMesh, rng: &mut impl Rng) -> Result<Point> {
        let (lo, hi) = mesh.bounds();
        for _ in 0..100_000 {
            let p = [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
            if self.contains(mesh, p) {
                return Ok(p);
            }
        }
        Err(Error::Validation(format!("valid region with exclusion {} appears empty", self.delta)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VelocityMode {
    /// Uniform unit field at an angle drawn uniformly from `[0, 2π)`.
    RandomUniform,
    /// Uniform unit field at a fixed angle.
    Uniform { angle: f64 },
    /// Fixed per-vertex field (stream-function or file derived).
    Field { velocity: Vec<Point> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub peclet: [f64; 2],
    pub velocity: VelocityMode,
    pub n_sensors: usize,
    /// Noise standard deviations as fractions of the field / velocity max.
    pub noise_u: f64,
    pub noise_v: f64,
    pub delta: f64,
    pub bump_radius: f64,
    pub capacity: usize,
    pub refresh_count: usize,
    pub nonlinear: Option<NonlinearAdvection>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            peclet: [1e3, 1e3],
            velocity: VelocityMode::RandomUniform,
            n_sensors: 5,
            noise_u: 0.0,
            noise_v: 0.0,
            delta: 0.1,
            bump_radius: 0.07,
            capacity: 1600,
            refresh_count: 0,
            nonlinear: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTriple {
    pub observation: ObservationSet,
    /// Field solving the forward problem for the unit-integral source.
    pub field: Cochain0,
    /// Unit-integral source density.
    pub source: Cochain0,
    pub center: Point,
    pub velocity: Vec<Point>,
    pub peclet: f64,
}

impl SampleTriple {
    pub fn instance(&self, mesh: &TriMesh) -> Result<ProblemInstance> {
        ProblemInstance::new(mesh, self.peclet, self.velocity.clone(), self.source.clone())
    }
}

const MAX_RETRIES: usize = 5;

/// Draws one sample with its own RNG stream.
pub fn generate_sample(
    mesh: &TriMesh,
    fc: &FineComplex,
    valid: &ValidRegion,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<SampleTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = None;
    for attempt in 0..MAX_RETRIES {
        let center = valid.sample(mesh, &mut rng)?;
        let velocity = match &cfg.velocity {
            VelocityMode::RandomUniform => uniform_velocity(mesh, rng.random_range(0.0..2.0 * PI)),
            VelocityMode::Uniform { angle } => uniform_velocity(mesh, *angle),
            VelocityMode::Field { velocity } => velocity.clone(),
        };
        let peclet = if cfg.peclet[1] > cfg.peclet[0] {
            // log-uniform over the range
            (cfg.peclet[0].ln() + rng.random::<f64>() * (cfg.peclet[1] / cfg.peclet[0]).ln()).exp()
        } else {
            cfg.peclet[0]
        };
        let bump = bump_source(center, cfg.bump_radius, mesh);
        let (source, degenerate) = normalize_density(&bump, mesh, fc)?;
        if degenerate {
            last_err = Some(Error::Validation("bump misses every vertex; mesh too coarse for radius".into()));
            continue;
        }
        let inst = ProblemInstance::new(mesh, peclet, velocity, source)?;
        let solved = match cfg.nonlinear {
            Some(nl) => solve_nonlinear_advection(mesh, fc, &inst, nl),
            None => solve_advection_diffusion(mesh, fc, &inst),
        };
        let field = match solved {
            Ok(u) => u,
            Err(e) => {
                log::warn!("sample solve failed (attempt {}): {e}", attempt + 1);
                last_err = Some(e);
                continue;
            }
        };
        let positions = (0..cfg.n_sensors)
            .map(|_| valid.sample(mesh, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let umax = field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let obs = sample_observations(mesh, &field, &inst, &positions, cfg.noise_u * umax, cfg.noise_v, rng.random())?;
        return Ok(SampleTriple {
            observation: obs,
            field,
            source: inst.source,
            center,
            velocity: inst.velocity,
            peclet,
        });
    }
    Err(last_err.unwrap_or_else(|| Error::Validation("sample generation failed".into())))
}

/// Per-sample seeds are derived from the cache seed and a running counter,
/// so the contents do not depend on generation order.
pub fn sample_seed(seed: u64, counter: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(counter);
    r.random()
}

#[derive(Debug, Clone)]
pub struct SampleCache {
    pub config: DatasetConfig,
    pub seed: u64,
    pub samples: Vec<SampleTriple>,
    counter: u64,
    rng: ChaCha8Rng,
}

impl SampleCache {
    /// Wraps samples drawn as `sample_seed(seed, 0..len)`.
    pub fn from_samples(config: DatasetConfig, seed: u64, samples: Vec<SampleTriple>) -> Self {
        let counter = samples.len() as u64;
        Self { config, seed, samples, counter, rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cace) }
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Replaces `refresh_count` distinct uniformly chosen entries with fresh samples.
    pub fn refresh(&mut self, mesh: &TriMesh, fc: &FineComplex, valid: &ValidRegion) -> Result<Vec<usize>> {
        let k = self.config.refresh_count.min(self.samples.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut idx = sample_indices(&mut self.rng, self.samples.len(), k).into_vec();
        idx.sort_unstable();
        for &i in &idx {
            self.samples[i] = generate_sample(mesh, fc, valid, &self.config, sample_seed(self.seed, self.counter))?;
            self.counter += 1;
        }
        Ok(idx)
    }
}

pub fn generate_dataset(mesh: &TriMesh, fc: &FineComplex, cfg: &DatasetConfig, seed: u64) -> Result<SampleCache> {
    if cfg.n_sensors == 0 {
        return Err(Error::Argument("at least one sensor is required".into()));
    }
    let valid = ValidRegion::new(mesh, cfg.delta);
    let samples = (0..cfg.capacity as u64)
        .map(|c| generate_sample(mesh, fc, &valid, cfg, sample_seed(seed, c)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleCache::from_samples(cfg.clone(), seed, samples))
}

/// `‖ũ − u_true‖ / ‖u_true‖` where `ũ` solves the forward problem with the
/// normalized prediction as source.
pub fn consistency_error(predicted: &[f64], inst_true: &ProblemInstance, mesh: &TriMesh, fc: &FineComplex) -> Result<f64> {
    let (rho_true, _) = normalize_density(&inst_true.source, mesh, fc)?;
    let (rho_pred, _) = normalize_density(predicted, mesh, fc)?;
    let mut truth = inst_true.clone();
    truth.source = rho_true;
    let u_true = solve_advection_diffusion(mesh, fc, &truth)?;
    let nt = fc.l2_norm(&u_true);
    if nt == 0.0 {
        return Err(Error::UndefinedMetric("true field has zero L2 norm".into()));
    }
    let mut pred = inst_true.clone();
    pred.source = rho_pred;
    let u_pred = solve_advection_diffusion(mesh, fc, &pred)?;
    let diff: Vec<f64> = u_pred.iter().zip(&u_true).map(|(a, b)| a - b).collect();
    Ok(fc.l2_norm(&diff) / nt)
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    w.write_all(&(xs.len() as u64).to_le_bytes())?;
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        out.push(f64::from_le_bytes(b8));
    }
    Ok(out)
}

fn flatten(ps: &[Point]) -> Vec<f64> {
    ps.iter().flat_map(|p| [p[0], p[1]]).collect()
}

fn unflatten(xs: &[f64]) -> Vec<Point> {
    xs.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

const SAMPLE_MAGIC: &[u8; 8] = b"CNWFSMP1";

/// Binary little-endian sample: magic, then length-prefixed f64 arrays
/// (scalars, positions, u, v, field, source, velocity).
pub fn write_sample(path: impl AsRef<Path>, s: &SampleTriple) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(SAMPLE_MAGIC);
    write_f64s(&mut buf, &[s.peclet, s.observation.peclet, s.center[0], s.center[1]])?;
    write_f64s(&mut buf, &flatten(&s.observation.positions))?;
    write_f64s(&mut buf, &s.observation.u)?;
    write_f64s(&mut buf, &flatten(&s.observation.v))?;
    write_f64s(&mut buf, &s.field)?;
    write_f64s(&mut buf, &s.source)?;
    write_f64s(&mut buf, &flatten(&s.velocity))?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_sample(path: impl AsRef<Path>) -> Result<SampleTriple> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut r = &bytes[..];
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SAMPLE_MAGIC {
        return Err(Error::Validation(format!("{} is not a sample file", path.display())));
    }
    let head = read_f64s(&mut r)?;
    if head.len() != 4 {
        return Err(Error::Validation(format!("{}: bad sample header", path.display())));
    }
    let positions = unflatten(&read_f64s(&mut r)?);
    let u = read_f64s(&mut r)?;
    let v = unflatten(&read_f64s(&mut r)?);
    let field = read_f64s(&mut r)?;
    let source = read_f64s(&mut r)?;
    let velocity = unflatten(&read_f64s(&mut r)?);
    Ok(SampleTriple {
        observation: ObservationSet { positions, u, v, peclet: head[1] },
        field,
        source,
        center: [head[2], head[3]],
        velocity,
        peclet: head[0],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub mesh_hash: String,
    pub seed: u64,
    pub config: DatasetConfig,
    pub config_hash: String,
    pub files: Vec<String>,
}

pub fn sample_file_name(i: usize) -> String {
    format!("sample_{i:05}.bin")
}

pub fn save_dataset(dir: impl AsRef<Path>, mesh: &TriMesh, cache: &SampleCache) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(cache.len());
    for (i, s) in cache.samples.iter().enumerate() {
        let name = sample_file_name(i);
        write_sample(dir.join(&name), s)?;
        files.push(name);
    }
    let manifest = DatasetManifest {
        mesh_hash: mesh.content_hash(),
        seed: cache.seed,
        config: cache.config.clone(),
        config_hash: dataset_config_hash(&cache.config, cache.seed, &mesh.content_hash())?,
        files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.as_ref().join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<SampleTriple>)> {
    let dir = dir.as_ref();
    let m = load_manifest(dir)?;
    let samples = m.files.iter().map(|f| read_sample(dir.join(f))).collect::<Result<Vec<_>>>()?;
    Ok((m, samples))
}

pub fn dataset_config_hash(cfg: &DatasetConfig, seed: u64, mesh_hash: &str) -> Result<String> {
    let mut bytes = serde_json::to_vec(cfg)?;
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(mesh_hash.as_bytes());
    Ok(sha256_hex(&bytes))
}
