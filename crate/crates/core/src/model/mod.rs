//! Conditional reduced model: a permutation-invariant sensor encoder feeding
//! partition, source and flux heads, whose outputs define a coarse
//! conservation law solved by Newton's method.

pub mod baseline;
pub mod checkpoint;
pub mod ops;
pub mod train;
pub mod trainer;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::feec::{Cochain0, FineComplex};
use crate::forward::ObservationSet;
pub use crate::forward::normalize_density;
use crate::mesh::{dist, Point, TriMesh};
use crate::quadrature::quadrature;
use crate::rom::{coarse_coboundary, reduced_jacobian, solve_reduced, CoarseComplex, CoarseFlux, NewtonOptions, ReducedState, ReductionMap};
use ops::{CoarseMass0, CoarseMass1, ImplicitSolve, ScatterW, SourceActivation, TransportCache};

/// Coarse row reserved for the Dirichlet boundary layer.
pub const BOUNDARY_ROW: usize = 0;
pub const N_FEATURES: usize = 6;
const N_GEO: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_coarse: usize,
    pub token_hidden: usize,
    pub d_token: usize,
    pub d_latent: usize,
    /// Multi-head self-attention between sensor tokens before pooling.
    pub attention: bool,
    pub heads: usize,
    pub coord_hidden: usize,
    pub d_key: usize,
    pub source_hidden: usize,
    pub flux_hidden: usize,
    /// Gain `α` on the nonlinear flux branch.
    pub flux_gain: f64,
    /// Initial linear flux `G = c·δ`, an effective coarse diffusivity `c`.
    pub flux_init_diffusion: f64,
    /// Scale of the initial sector-shaped positional prior on partition scores.
    pub partition_prior: f64,
    /// Typical Péclet number, sets the initial diffusivity.
    pub peclet_typ: f64,
    /// Field magnitude used to scale sensor readings.
    pub u_scale: f64,
    /// Weight of the field misfit; `None` uses the inverse mean squared
    /// field norm of the training data, making the term a relative error.
    pub field_weight: Option<f64>,
    /// Global gradient norm above which updates are rescaled.
    pub grad_clip: Option<f64>,
    /// Factor applied to the source head output; `None` means 1 until
    /// calibrated against training data.
    pub source_scale: Option<f64>,
    pub lambda_ot: f64,
    /// Entropic regularization as a fraction of the squared domain diameter.
    pub ot_eps_factor: f64,
    pub ot_max_iter: usize,
    /// Geodesic instead of Euclidean transport cost.
    pub geodesic_cost: bool,
    pub quad_order: usize,
    pub newton: NewtonOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_coarse: 5,
            token_hidden: 32,
            d_token: 32,
            d_latent: 64,
            attention: false,
            heads: 4,
            coord_hidden: 32,
            d_key: 16,
            source_hidden: 32,
            flux_hidden: 32,
            flux_gain: 0.1,
            flux_init_diffusion: 0.5,
            partition_prior: 4.0,
            peclet_typ: 1e3,
            u_scale: 1.0,
            field_weight: None,
            grad_clip: Some(1.0),
            source_scale: None,
            lambda_ot: 1.0,
            ot_eps_factor: 1e-2,
            ot_max_iter: crate::transport::DEFAULT_MAX_ITER,
            geodesic_cost: false,
            quad_order: 2,
            newton: NewtonOptions::default(),
        }
    }
}

impl ModelConfig {
    pub fn n_edges(&self) -> usize {
        self.n_coarse * (self.n_coarse - 1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_coarse < 2 {
            return Err(Error::Validation(format!("need at least 2 coarse partitions, got {}", self.n_coarse)));
        }
        if self.attention && (self.heads == 0 || self.d_token % self.heads != 0) {
            return Err(Error::Validation(format!(
                "token dim {} is not divisible by {} heads",
                self.d_token, self.heads
            )));
        }
        if !(self.flux_gain >= 0.0) {
            return Err(Error::Validation(format!("flux gain must be nonnegative, got {}", self.flux_gain)));
        }
        if !(self.u_scale > 0.0 && self.peclet_typ > 0.0 && self.ot_eps_factor > 0.0) {
            return Err(Error::Validation("u_scale, peclet_typ and ot_eps_factor must be positive".into()));
        }
        if self.field_weight.is_some_and(|w| !(w >= 0.0 && w.is_finite())) || self.grad_clip.is_some_and(|c| !(c > 0.0))
            || self.source_scale.is_some_and(|c| !(c > 0.0 && c.is_finite()))
        {
            return Err(Error::Validation("field_weight must be nonnegative, grad_clip and source_scale positive".into()));
        }
        Ok(())
    }
}

/// Named dense tensors, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Mat>,
}

impl ParamSet {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> &Mat {
        &self.tensors[self.index(name).unwrap_or_else(|| panic!("no parameter {name}"))]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Mat {
        let i = self.index(name).unwrap_or_else(|| panic!("no parameter {name}"));
        &mut self.tensors[i]
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn unflatten(&mut self, x: &[f64]) {
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.as_mut_slice().copy_from_slice(&x[off..off + n]);
            off += n;
        }
    }

    fn push(&mut self, name: &str, t: Mat) {
        self.names.push(name.to_string());
        self.tensors.push(t);
    }

    /// Uniform Glorot initialization.
    fn push_dense(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut ChaCha8Rng) {
        let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.push(name, Mat::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..a)));
    }

    fn push_bias(&mut self, name: &str, n: usize, value: f64) {
        self.push(name, Mat::from_element(1, n, value));
    }

    /// Leaves on `tape`, one per tensor.
    pub fn leaves(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            names: self.names.clone(),
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }
}

pub struct ParamVars {
    names: Vec<String>,
    pub vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        self.vars[self.names.iter().position(|n| n == name).unwrap_or_else(|| panic!("no parameter {name}"))]
    }
}

pub(crate) fn push_encoder(p: &mut ParamSet, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    let d = cfg.d_token;
    p.push_dense("enc.w1", N_FEATURES, cfg.token_hidden, 1.0, rng);
    p.push_bias("enc.b1", cfg.token_hidden, 0.0);
    p.push_dense("enc.w2", cfg.token_hidden, d, 1.0, rng);
    p.push_bias("enc.b2", d, 0.0);
    if cfg.attention {
        for n in ["att.wq", "att.wk", "att.wv", "att.wo"] {
            p.push_dense(n, d, d, 1.0, rng);
        }
    }
    p.push_dense("pool.q", d, 1, 1.0, rng);
    p.push_dense("lat.w", d, cfg.d_latent, 1.0, rng);
    p.push_bias("lat.b", cfg.d_latent, 0.0);
}

/// Fresh CNWF parameters.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet { names: vec![], tensors: vec![] };
    let (l, nc, ne) = (cfg.d_latent, cfg.n_coarse, cfg.n_edges());
    push_encoder(&mut p, cfg, &mut rng);
    p.push_dense("part.cw1", 2, cfg.coord_hidden, 1.0, &mut rng);
    p.push_bias("part.cb1", cfg.coord_hidden, 0.0);
    p.push_dense("part.cw2", cfg.coord_hidden, cfg.d_key, 1.0, &mut rng);
    p.push_bias("part.cb2", cfg.d_key, 0.0);
    p.push_dense("part.kw", l, (nc - 1) * cfg.d_key, 1.0, &mut rng);
    p.push_dense("part.kb", 1, (nc - 1) * cfg.d_key, 1.0, &mut rng);
    // logits linear in [x, y, x² + y²]: equal angular sectors at init,
    // latent-dependent shifts and radial terms learned
    p.push(
        "part.gb",
        Mat::from_fn(1, N_GEO * (nc - 1), |_, i| {
            let (d, k) = (i % N_GEO, i / N_GEO);
            let a = 2.0 * std::f64::consts::PI * k as f64 / (nc - 1) as f64;
            cfg.partition_prior
                * match d {
                    0 => a.cos(),
                    1 => a.sin(),
                    _ => 0.0,
                }
        }),
    );
    p.push_dense("part.gw", l, N_GEO * (nc - 1), 0.1, &mut rng);
    p.push_dense("src.w1", l, cfg.source_hidden, 1.0, &mut rng);
    p.push_bias("src.b1", cfg.source_hidden, 0.0);
    p.push_dense("src.w2", cfg.source_hidden, nc, 1.0, &mut rng);
    p.push_bias("src.b2", nc, 0.5);
    p.push_dense("flux.gw", l, ne * nc, 0.01, &mut rng);
    let d0 = coarse_coboundary(nc) * cfg.flux_init_diffusion;
    p.push("flux.gb", Mat::from_row_slice(1, ne * nc, d0.as_slice()));
    p.push_dense("flux.w1", nc + l, cfg.flux_hidden, 1.0, &mut rng);
    p.push_bias("flux.b1", cfg.flux_hidden, 0.0);
    p.push_dense("flux.w2", cfg.flux_hidden, ne, 1.0, &mut rng);
    p.push("log_eps", Mat::from_element(1, 1, (1.0 / cfg.peclet_typ).ln()));
    p
}

/// Mesh-dependent data shared by every forward pass.
pub struct ModelContext<'m> {
    pub mesh: &'m TriMesh,
    pub fc: &'m FineComplex,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    /// Coordinates mapped into `[-1, 1]²` by the bounding box.
    center: Point,
    half_extent: f64,
    pub transport: TransportCache,
    pub rule: crate::quadrature::QuadratureRule,
}

impl<'m> ModelContext<'m> {
    pub fn new(mesh: &'m TriMesh, fc: &'m FineComplex, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let flags = mesh.dirichlet_flags();
        let interior: Vec<usize> = (0..mesh.n_vertices()).filter(|&v| !flags[v]).collect();
        let boundary: Vec<usize> = (0..mesh.n_vertices()).filter(|&v| flags[v]).collect();
        if interior.is_empty() {
            return Err(Error::Validation("mesh has no interior vertices".into()));
        }
        let (lo, hi) = mesh.bounds();
        let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let half_extent = ((hi[0] - lo[0]).max(hi[1] - lo[1]) / 2.0).max(f64::MIN_POSITIVE);
        let n = mesh.n_vertices();
        let cost = if cfg.geodesic_cost {
            crate::transport::GeodesicCost::new(mesh).table.map(|d| d * d)
        } else {
            DMatrix::from_fn(n, n, |i, j| dist(mesh.vertex(i), mesh.vertex(j)).powi(2))
        };
        let diam2 = cost.max();
        let transport = TransportCache::new(cost, cfg.ot_eps_factor * diam2, cfg.ot_max_iter);
        Ok(Self { mesh, fc, interior, boundary, center, half_extent, transport, rule: quadrature(cfg.quad_order)? })
    }

    pub fn normalized(&self, p: Point) -> Point {
        [(p[0] - self.center[0]) / self.half_extent, (p[1] - self.center[1]) / self.half_extent]
    }

    fn interior_coords(&self) -> Mat {
        Mat::from_fn(self.interior.len(), 2, |i, d| self.normalized(self.mesh.vertex(self.interior[i]))[d])
    }

    fn scatter(&self, n0c: usize) -> ScatterW {
        ScatterW {
            interior: self.interior.clone(),
            boundary: self.boundary.clone(),
            n0c,
            n0f: self.mesh.n_vertices(),
            boundary_row: BOUNDARY_ROW,
        }
    }
}

/// Per-sensor features `[x, y, asinh(u/u_s), vx, vy, log10(Pe)/3]`.
pub fn sensor_features(obs: &ObservationSet, ctx: &ModelContext, cfg: &ModelConfig) -> Result<Mat> {
    if obs.is_empty() {
        return Err(Error::Argument("observation set has no sensors".into()));
    }
    let lp = obs.peclet.log10() / 3.0;
    Ok(Mat::from_fn(obs.len(), N_FEATURES, |i, k| {
        let x = ctx.normalized(obs.positions[i]);
        match k {
            0 => x[0],
            1 => x[1],
            2 => (obs.u[i] / cfg.u_scale).asinh(),
            3 => obs.v[i][0],
            4 => obs.v[i][1],
            _ => lp,
        }
    }))
}

/// Token MLP, optional self-attention, attention pooling and the latent map.
/// Returns a `1 × d_latent` node.
pub(crate) fn encode_on_tape(tape: &mut Tape, pv: &ParamVars, x: Mat, cfg: &ModelConfig) -> Var {
    let x = tape.leaf(x);
    let h = tape.affine(x, pv.get("enc.w1"), pv.get("enc.b1"));
    let h = tape.relu(h);
    let mut h = tape.affine(h, pv.get("enc.w2"), pv.get("enc.b2"));
    let d = cfg.d_token;
    if cfg.attention {
        let dh = d / cfg.heads;
        let q = tape.matmul(h, pv.get("att.wq"));
        let k = tape.matmul(h, pv.get("att.wk"));
        let v = tape.matmul(h, pv.get("att.wv"));
        let mut outs = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let qh = tape.slice_cols(q, head * dh, dh);
            let kh = tape.slice_cols(k, head * dh, dh);
            let vh = tape.slice_cols(v, head * dh, dh);
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt);
            let s = tape.scale(s, 1.0 / (dh as f64).sqrt());
            let a = tape.softmax_rows(s);
            outs.push(tape.matmul(a, vh));
        }
        let cat = tape.concat_cols(&outs);
        let o = tape.matmul(cat, pv.get("att.wo"));
        h = tape.add(h, o);
    }
    let s = tape.matmul(h, pv.get("pool.q"));
    let s = tape.scale(s, 1.0 / (d as f64).sqrt());
    let st = tape.transpose(s);
    let a = tape.softmax_rows(st);
    let pooled = tape.matmul(a, h);
    let z = tape.affine(pooled, pv.get("lat.w"), pv.get("lat.b"));
    tape.tanh(z)
}

/// Observation-independent parts of the partition head, shared across a batch.
#[derive(Debug, Clone, Copy)]
pub struct PartitionQueries {
    /// Coordinate-MLP queries, interior × d_key.
    pub queries: Var,
    /// Geometric features `[x, y, x² + y²]`, interior × 3.
    pub geo: Var,
}

pub fn partition_queries(tape: &mut Tape, pv: &ParamVars, ctx: &ModelContext) -> PartitionQueries {
    let c = tape.leaf(ctx.interior_coords());
    let h = tape.affine(c, pv.get("part.cw1"), pv.get("part.cb1"));
    let h = tape.relu(h);
    let queries = tape.affine(h, pv.get("part.cw2"), pv.get("part.cb2"));
    let geo = tape.leaf(Mat::from_fn(ctx.interior.len(), N_GEO, |i, d| {
        let x = ctx.normalized(ctx.mesh.vertex(ctx.interior[i]));
        [x[0], x[1], x[0] * x[0] + x[1] * x[1]][d]
    }));
    PartitionQueries { queries, geo }
}

/// Nodes of one conditional forward pass.
pub struct ForwardNodes {
    pub z: Var,
    pub w: Var,
    /// Coarse source, `n0c × 1`.
    pub fhat: Var,
    /// Converged coarse state `n0c × 1`, when Newton succeeded.
    pub u: Option<Var>,
    pub solve: Result<ReducedState>,
}

/// Numeric flux head used by Newton:
/// `N(û) = G(ẑ)û + α·(tanh([û; ẑ]W1 + b1) − tanh([0; ẑ]W1 + b1))W2`,
/// so the zero state carries no flux.
pub struct FluxHead {
    pub g: DMatrix<f64>,
    w1u: DMatrix<f64>,
    zb: DVector<f64>,
    h0: DVector<f64>,
    w2: DMatrix<f64>,
    alpha: f64,
}

impl FluxHead {
    pub fn new(params: &ParamSet, z: &Mat, cfg: &ModelConfig) -> Self {
        let (nc, ne) = (cfg.n_coarse, cfg.n_edges());
        let gv = z * params.get("flux.gw") + params.get("flux.gb");
        let g = DMatrix::from_column_slice(ne, nc, gv.as_slice());
        let w1 = params.get("flux.w1");
        let w1u = w1.rows(0, nc).into_owned();
        let zb = (z * w1.rows(nc, cfg.d_latent) + params.get("flux.b1")).transpose();
        let zb = DVector::from_column_slice(zb.as_slice());
        Self { g, w1u, h0: zb.map(f64::tanh), zb, w2: params.get("flux.w2").clone(), alpha: cfg.flux_gain }
    }

    fn hidden(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.w1u.tr_mul(u) + &self.zb).map(f64::tanh)
    }
}

impl CoarseFlux for FluxHead {
    fn eval(&self, u: &DVector<f64>) -> DVector<f64> {
        let h = self.hidden(u);
        &self.g * u + self.w2.tr_mul(&(h - &self.h0)) * self.alpha
    }

    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let h = self.hidden(u);
        let d = h.map(|t| 1.0 - t * t);
        let inner = DMatrix::from_fn(d.len(), u.len(), |k, i| d[k] * self.w1u[(i, k)]);
        &self.g + self.w2.transpose() * inner * self.alpha
    }
}

/// `N(û, ẑ)` on the tape as an `n1c × 1` node for a constant `û` node.
fn flux_on_tape(tape: &mut Tape, pv: &ParamVars, z: Var, u: Var, cfg: &ModelConfig) -> Var {
    let (nc, ne) = (cfg.n_coarse, cfg.n_edges());
    let gv = tape.affine(z, pv.get("flux.gw"), pv.get("flux.gb"));
    let g = tape.reshape(gv, ne, nc);
    let lin = tape.matmul(g, u);
    let ut = tape.transpose(u);
    let inp = tape.concat_cols(&[ut, z]);
    let h = tape.affine(inp, pv.get("flux.w1"), pv.get("flux.b1"));
    let h = tape.tanh(h);
    let w1z = tape.slice_rows(pv.get("flux.w1"), nc, cfg.d_latent);
    let h0 = tape.affine(z, w1z, pv.get("flux.b1"));
    let h0 = tape.tanh(h0);
    let dh = tape.sub(h, h0);
    let o = tape.matmul(dh, pv.get("flux.w2"));
    let o = tape.scale(o, cfg.flux_gain);
    let ot = tape.transpose(o);
    tape.add(lin, ot)
}

/// Encoder, heads, coarse assembly and the Newton solve for one observation
/// set. When Newton converges the root enters the tape through an implicit
/// node so gradients flow through the solve.
pub fn forward_on_tape<'a>(
    tape: &mut Tape<'a>,
    pv: &ParamVars,
    params: &ParamSet,
    queries: PartitionQueries,
    ctx: &'a ModelContext,
    obs: &ObservationSet,
    cfg: &ModelConfig,
) -> Result<ForwardNodes> {
    let (nc, ne) = (cfg.n_coarse, cfg.n_edges());
    let z = encode_on_tape(tape, pv, sensor_features(obs, ctx, cfg)?, cfg);

    // partition head
    let kv = tape.affine(z, pv.get("part.kw"), pv.get("part.kb"));
    let keys = tape.reshape(kv, nc - 1, cfg.d_key);
    let kt = tape.transpose(keys);
    let s = tape.matmul(queries.queries, kt);
    let s = tape.scale(s, 1.0 / (cfg.d_key as f64).sqrt());
    let gv = tape.affine(z, pv.get("part.gw"), pv.get("part.gb"));
    let gk = tape.reshape(gv, N_GEO, nc - 1);
    let prior = tape.matmul(queries.geo, gk);
    let s = tape.add(s, prior);
    let p = tape.softmax_rows(s);
    let sc = ctx.scatter(nc);
    let wv = sc.forward(tape.value(p));
    let w = tape.custom(&[p], wv, Box::new(sc));

    // source head, boundary entry pinned to zero
    let h = tape.affine(z, pv.get("src.w1"), pv.get("src.b1"));
    let h = tape.relu(h);
    let f = tape.affine(h, pv.get("src.w2"), pv.get("src.b2"));
    let act = SourceActivation { mask: (0..nc).map(|k| k != BOUNDARY_ROW).collect() };
    let fv = act.forward(tape.value(f));
    let f = tape.custom(&[f], fv, Box::new(act));
    let f = tape.scale(f, cfg.source_scale.unwrap_or(1.0));
    let fhat = tape.transpose(f);

    // coarse complex
    let m0op = CoarseMass0 { m0f: &ctx.fc.m0 };
    let m0v = m0op.forward(tape.value(w));
    let m0 = tape.custom(&[w], m0v, Box::new(m0op));
    let m1op = CoarseMass1 { mesh: ctx.mesh, rule: ctx.rule.clone() };
    let m1v = m1op.forward(tape.value(w));
    let m1 = tape.custom(&[w], m1v, Box::new(m1op));
    let eps = tape.exp(pv.get("log_eps"));

    let cc = CoarseComplex {
        m0: tape.value(m0).clone(),
        m1: tape.value(m1).clone(),
        d0: coarse_coboundary(nc),
        edges: crate::rom::coarse_edges(nc),
        boundary_row: BOUNDARY_ROW,
    };
    let flux = FluxHead::new(params, tape.value(z), cfg);
    let fvec = DVector::from_column_slice(tape.value(fhat).as_slice());
    let epsv = tape.scalar_value(eps);
    let solve = solve_reduced(&cc, epsv, &flux, &fvec, 0.0, None, &cfg.newton);
    let u = match &solve {
        Ok(state) => {
            let uc = tape.leaf(Mat::from_column_slice(nc, 1, state.u.as_slice()));
            // H(û*, θ) with the boundary row removed (it does not depend on θ)
            let d0 = coarse_coboundary(nc);
            let du = tape.const_left(d0.clone(), uc);
            let edu = tape.scalar_mul(eps, du);
            let nflux = flux_on_tape(tape, pv, z, uc, cfg);
            debug_assert_eq!(tape.value(nflux).nrows(), ne);
            let q = tape.add(edu, nflux);
            let mq = tape.matmul(m1, q);
            let div = tape.const_left(d0.transpose(), mq);
            let mf = tape.matmul(m0, fhat);
            let hres = tape.sub(div, mf);
            let mut keep = Mat::from_element(nc, 1, 1.0);
            keep[(BOUNDARY_ROW, 0)] = 0.0;
            let hres = tape.mask(hres, keep);
            let jac = reduced_jacobian(&state.u, epsv, &flux, &cc);
            let uv = tape.value(uc).clone();
            Some(tape.custom(&[hres], uv, Box::new(ImplicitSolve { jacobian: jac })))
        }
        Err(_) => None,
    };
    Ok(ForwardNodes { z, w, fhat, u, solve })
}

#[derive(Debug, Clone)]
pub struct PredictionBundle {
    pub latent: Vec<f64>,
    pub reduction: ReductionMap,
    pub source: DVector<f64>,
    /// Newton result; `None` when the solve failed.
    pub state: Option<ReducedState>,
    pub converged: bool,
    /// Unit-integral fine density from the pulled-back source.
    pub density: Cochain0,
    /// The source head produced no mass and the uniform density was used.
    pub degenerate: bool,
}

impl PredictionBundle {
    /// `Wᵀû` on the fine mesh.
    pub fn field(&self) -> Option<Cochain0> {
        self.state.as_ref().map(|s| crate::rom::pullback(&self.reduction, &s.u))
    }
}

/// Full conditional pipeline for one observation set.
pub fn cnwf_forward(obs: &ObservationSet, params: &ParamSet, ctx: &ModelContext, cfg: &ModelConfig) -> Result<PredictionBundle> {
    let mut tape = Tape::new();
    let pv = params.leaves(&mut tape);
    let queries = partition_queries(&mut tape, &pv, ctx);
    let nodes = forward_on_tape(&mut tape, &pv, params, queries, ctx, obs, cfg)?;
    let reduction = ReductionMap { w: tape.value(nodes.w).clone(), boundary_row: BOUNDARY_ROW };
    let source = DVector::from_column_slice(tape.value(nodes.fhat).as_slice());
    let fine = crate::rom::pullback(&reduction, &source);
    let (density, degenerate) = normalize_density(&fine, ctx.mesh, ctx.fc)?;
    let (state, converged) = match nodes.solve {
        Ok(s) => (Some(s), true),
        Err(e) => {
            log::warn!("forward solve did not converge: {e}");
            (None, false)
        }
    };
    Ok(PredictionBundle {
        latent: tape.value(nodes.z).iter().copied().collect(),
        reduction,
        source,
        state,
        converged,
        density,
        degenerate,
    })
}

/// Latent code alone.
pub fn encode(obs: &ObservationSet, params: &ParamSet, ctx: &ModelContext, cfg: &ModelConfig) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let pv = params.leaves(&mut tape);
    let z = encode_on_tape(&mut tape, &pv, sensor_features(obs, ctx, cfg)?, cfg);
    Ok(tape.value(z).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{generate_dataset, DatasetConfig};
    use crate::mesh::generate_disk_mesh;

    fn setup() -> (TriMesh, FineComplex) {
        let mesh = generate_disk_mesh(1.0, 0.15).unwrap();
        let fc = FineComplex::assemble(&mesh).unwrap();
        (mesh, fc)
    }

    #[test]
    fn bundle_shapes_and_invariants() {
        let (mesh, fc) = setup();
        let cfg = ModelConfig::default();
        let ctx = ModelContext::new(&mesh, &fc, &cfg).unwrap();
        let params = init_params(&cfg, 1);
        let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 3, ..Default::default() }, 4).unwrap();
        for s in &data.samples {
            let b = cnwf_forward(&s.observation, &params, &ctx, &cfg).unwrap();
            assert_eq!(b.reduction.w.shape(), (5, mesh.n_vertices()));
            assert_eq!(b.source.len(), 5);
            assert_eq!(b.state.as_ref().unwrap().u.len(), 5);
            assert!(b.converged && !b.degenerate);
            b.reduction.validate(&mesh).unwrap();
            assert!(b.source.iter().all(|&x| x >= 0.0));
            assert_eq!(b.source[BOUNDARY_ROW], 0.0);
            assert!((fc.integrate(&b.density) - 1.0).abs() < 1e-10);
            assert!(b.density.iter().all(|&x| x >= 0.0));
            let again = cnwf_forward(&s.observation, &params, &ctx, &cfg).unwrap();
            assert_eq!(again.density, b.density);
        }
    }

    #[test]
    fn permutation_invariance() {
        let (mesh, fc) = setup();
        for attention in [false, true] {
            let cfg = ModelConfig { attention, ..Default::default() };
            let ctx = ModelContext::new(&mesh, &fc, &cfg).unwrap();
            let params = init_params(&cfg, 2);
            let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 1, n_sensors: 6, ..Default::default() }, 5).unwrap();
            let obs = &data.samples[0].observation;
            let perm = obs.permuted(&[3, 0, 5, 1, 4, 2]);
            let a = encode(obs, &params, &ctx, &cfg).unwrap();
            let b = encode(&perm, &params, &ctx, &cfg).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12));
            let ra = cnwf_forward(obs, &params, &ctx, &cfg).unwrap().density;
            let rb = cnwf_forward(&perm, &params, &ctx, &cfg).unwrap().density;
            assert!(ra.iter().zip(&rb).all(|(x, y)| (x - y).abs() <= 1e-10));
        }
    }

    #[test]
    fn sensor_count_and_duplicates() {
        let (mesh, fc) = setup();
        let cfg = ModelConfig::default();
        let ctx = ModelContext::new(&mesh, &fc, &cfg).unwrap();
        let params = init_params(&cfg, 3);
        for n in [5, 9] {
            let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 1, n_sensors: n, ..Default::default() }, 6).unwrap();
            assert_eq!(encode(&data.samples[0].observation, &params, &ctx, &cfg).unwrap().len(), cfg.d_latent);
        }
        let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 1, n_sensors: 2, ..Default::default() }, 7).unwrap();
        let obs = &data.samples[0].observation;
        let mut dup = obs.clone();
        dup.positions.push(obs.positions[0]);
        dup.u.push(obs.u[0]);
        dup.v.push(obs.v[0]);
        let a = encode(obs, &params, &ctx, &cfg).unwrap();
        let b = encode(&dup, &params, &ctx, &cfg).unwrap();
        // multiset semantics: the duplicate shifts the pooling weights
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
        let empty = ObservationSet { positions: vec![], u: vec![], v: vec![], peclet: 1e3 };
        assert!(matches!(encode(&empty, &params, &ctx, &cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn flux_jacobian_matches_finite_differences() {
        let cfg = ModelConfig { flux_gain: 0.7, ..Default::default() };
        let params = init_params(&cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = Mat::from_fn(1, cfg.d_latent, |_, _| rng.random_range(-1.0..1.0));
        let flux = FluxHead::new(&params, &z, &cfg);
        let u = DVector::from_fn(cfg.n_coarse, |_, _| rng.random_range(-2.0..2.0));
        let j = flux.jacobian(&u);
        assert_eq!(flux.eval(&u).len(), cfg.n_edges());
        let h = 1e-6;
        let fd = DMatrix::from_fn(cfg.n_edges(), cfg.n_coarse, |r, c| {
            let mut up = u.clone();
            up[c] += h;
            let mut um = u.clone();
            um[c] -= h;
            (flux.eval(&up)[r] - flux.eval(&um)[r]) / (2.0 * h)
        });
        assert!((&j - &fd).norm() <= 1e-5 * fd.norm());
    }

    #[test]
    fn linear_flux_converges_fast() {
        let (mesh, fc) = setup();
        let cfg = ModelConfig { flux_gain: 0.0, ..Default::default() };
        let ctx = ModelContext::new(&mesh, &fc, &cfg).unwrap();
        let params = init_params(&cfg, 5);
        let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 2, ..Default::default() }, 8).unwrap();
        for s in &data.samples {
            let b = cnwf_forward(&s.observation, &params, &ctx, &cfg).unwrap();
            assert!(b.state.unwrap().iterations <= 2);
        }
    }

    #[test]
    fn uniform_scores_give_uniform_partitions() {
        let (mesh, fc) = setup();
        let cfg = ModelConfig::default();
        let ctx = ModelContext::new(&mesh, &fc, &cfg).unwrap();
        let mut params = init_params(&cfg, 6);
        params.get_mut("part.kw").fill(0.0);
        params.get_mut("part.kb").fill(0.0);
        params.get_mut("part.gb").fill(0.0);
        params.get_mut("part.gw").fill(0.0);
        let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 1, ..Default::default() }, 9).unwrap();
        let b = cnwf_forward(&data.samples[0].observation, &params, &ctx, &cfg).unwrap();
        let k = (cfg.n_coarse - 1) as f64;
        for &v in &ctx.interior {
            for r in 1..cfg.n_coarse {
                assert!((b.reduction.w[(r, v)] - 1.0 / k).abs() < 1e-15);
            }
            assert_eq!(b.reduction.w[(BOUNDARY_ROW, v)], 0.0);
        }
    }

    #[test]
    fn source_scaling_leaves_density_unchanged() {
        let (mesh, fc) = setup();
        let cfg = ModelConfig::default();
        let ctx = ModelContext::new(&mesh, &fc, &cfg).unwrap();
        let params = init_params(&cfg, 7);
        let mut scaled = params.clone();
        *scaled.get_mut("src.w2") *= 3.0;
        *scaled.get_mut("src.b2") *= 3.0;
        let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 1, ..Default::default() }, 10).unwrap();
        let a = cnwf_forward(&data.samples[0].observation, &params, &ctx, &cfg).unwrap().density;
        let b = cnwf_forward(&data.samples[0].observation, &scaled, &ctx, &cfg).unwrap().density;
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-10 * x.abs().max(1.0)));
    }
}
