//! Learned coarse Whitney complex and the reduced conservation system.
//!
//! A column-stochastic weight matrix `W` (coarse × fine) defines coarse
//! 0-forms `ψ_j = Σ_i W_ji φ_i`. Coarse edges are all pairs `i < j` with
//! Whitney-type functions `ψ¹_ij = ψ_j∇ψ_i − ψ_i∇ψ_j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feec::{Cochain0, FineComplex};
use crate::mesh::TriMesh;
use crate::quadrature::quadrature;
use crate::sparse::CsrMatrix;

pub const POU_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionMap {
    pub w: DMatrix<f64>,
    pub boundary_row: usize,
}

impl ReductionMap {
    pub fn n_coarse(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_fine(&self) -> usize {
        self.w.ncols()
    }

    /// Nonnegativity, column sums and the pinned boundary row.
    pub fn validate(&self, mesh: &TriMesh) -> Result<()> {
        let (nc, nf) = self.w.shape();
        if nf != mesh.n_vertices() {
            return Err(Error::Validation(format!("W has {nf} columns, mesh has {} vertices", mesh.n_vertices())));
        }
        if self.boundary_row >= nc {
            return Err(Error::Validation(format!("boundary row {} out of range (n0c = {nc})", self.boundary_row)));
        }
        if let Some(((r, c), v)) = self
            .w
            .iter()
            .enumerate()
            .map(|(k, v)| ((k % nc, k / nc), v))
            .find(|(_, &v)| v < 0.0 || !v.is_finite())
        {
            return Err(Error::Validation(format!("W[{r}, {c}] = {v} is negative or non-finite")));
        }
        let (worst, dev) = (0..nf)
            .map(|i| (i, (self.w.column(i).sum() - 1.0).abs()))
            .fold((0, 0.0), |b, x| if x.1 > b.1 { x } else { b });
        if dev > POU_TOL {
            return Err(Error::Validation(format!(
                "partition of unity violated: column {worst} sums to 1 {:+.3e}",
                self.w.column(worst).sum() - 1.0
            )));
        }
        let flags = mesh.dirichlet_flags();
        for (i, &b) in flags.iter().enumerate() {
            let want = if b { 1.0 } else { 0.0 };
            if self.w[(self.boundary_row, i)] != want {
                return Err(Error::Validation(format!(
                    "boundary row weight at vertex {i} is {}, expected {want}",
                    self.w[(self.boundary_row, i)]
                )));
            }
        }
        Ok(())
    }

    /// Indicator partition: vertex `i` belongs to `labels[i]`, Dirichlet
    /// vertices to `boundary_row`.
    pub fn from_labels(mesh: &TriMesh, labels: &[usize], n0c: usize, boundary_row: usize) -> Self {
        let mut w = DMatrix::zeros(n0c, mesh.n_vertices());
        for (i, &l) in labels.iter().enumerate() {
            let row = if mesh.dirichlet_flags()[i] { boundary_row } else { l };
            w[(row, i)] = 1.0;
        }
        Self { w, boundary_row }
    }
}

/// Coarse edges `(i, j)`, `i < j`, in lexicographic order.
pub fn coarse_edges(n0c: usize) -> Vec<(usize, usize)> {
    (0..n0c)
        .flat_map(|i| (i + 1..n0c).map(move |j| (i, j)))
        .collect()
}

/// `δ0c`: `a ↦ a_i − a_j` on edge `(i, j)`.
pub fn coarse_coboundary(n0c: usize) -> DMatrix<f64> {
    let edges = coarse_edges(n0c);
    let mut d = DMatrix::zeros(edges.len(), n0c);
    for (e, &(i, j)) in edges.iter().enumerate() {
        d[(e, i)] = 1.0;
        d[(e, j)] = -1.0;
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseComplex {
    pub m0: DMatrix<f64>,
    pub m1: DMatrix<f64>,
    pub d0: DMatrix<f64>,
    pub edges: Vec<(usize, usize)>,
    pub boundary_row: usize,
}

impl CoarseComplex {
    pub fn n0(&self) -> usize {
        self.m0.nrows()
    }

    pub fn n1(&self) -> usize {
        self.edges.len()
    }

    /// `δᵀ M1 δ`.
    pub fn stiffness(&self) -> DMatrix<f64> {
        self.d0.transpose() * &self.m1 * &self.d0
    }
}

/// `S · Wᵀ` for sparse `S` (fine × fine) and dense `W` (coarse × fine).
pub fn sparse_times_wt(s: &CsrMatrix, w: &DMatrix<f64>) -> DMatrix<f64> {
    let nc = w.nrows();
    let mut out = DMatrix::zeros(s.nrows(), nc);
    for i in 0..s.nrows() {
        for (k, v) in s.row(i) {
            for j in 0..nc {
                out[(i, j)] += v * w[(j, k)];
            }
        }
    }
    out
}

/// Per-triangle coarse values at the quadrature points and constant gradients.
pub(crate) fn coarse_basis_on_triangle(
    mesh: &TriMesh,
    w: &DMatrix<f64>,
    t: usize,
    points: &[[f64; 3]],
) -> (Vec<Vec<f64>>, Vec<[f64; 2]>) {
    let tri = mesh.triangles()[t];
    let g = mesh.bary_gradients(t);
    let nc = w.nrows();
    let grads = (0..nc)
        .map(|i| {
            let mut v = [0.0; 2];
            for k in 0..3 {
                v[0] += w[(i, tri[k])] * g[k][0];
                v[1] += w[(i, tri[k])] * g[k][1];
            }
            v
        })
        .collect();
    let vals = points
        .iter()
        .map(|l| (0..nc).map(|i| (0..3).map(|k| w[(i, tri[k])] * l[k]).sum()).collect())
        .collect();
    (vals, grads)
}

pub fn build_coarse_complex(mesh: &TriMesh, fc: &FineComplex, red: &ReductionMap, quad_order: usize) -> Result<CoarseComplex> {
    red.validate(mesh)?;
    let w = &red.w;
    let nc = w.nrows();
    let m0 = w * sparse_times_wt(&fc.m0, w);
    let edges = coarse_edges(nc);
    let ne = edges.len();
    let rule = quadrature(quad_order)?;
    let mut m1 = DMatrix::zeros(ne, ne);
    let mut psi1 = vec![[0.0; 2]; ne];
    for t in 0..mesh.n_triangles() {
        let area = mesh.area(t);
        let (vals, grads) = coarse_basis_on_triangle(mesh, w, t, &rule.points);
        for (q, wq) in rule.weights.iter().enumerate() {
            let psi = &vals[q];
            for (e, &(i, j)) in edges.iter().enumerate() {
                psi1[e] = [
                    psi[j] * grads[i][0] - psi[i] * grads[j][0],
                    psi[j] * grads[i][1] - psi[i] * grads[j][1],
                ];
            }
            let s = wq * area;
            for a in 0..ne {
                for b in a..ne {
                    let v = s * (psi1[a][0] * psi1[b][0] + psi1[a][1] * psi1[b][1]);
                    m1[(a, b)] += v;
                }
            }
        }
    }
    for a in 0..ne {
        for b in 0..a {
            m1[(a, b)] = m1[(b, a)];
        }
    }
    Ok(CoarseComplex {
        m0,
        m1,
        d0: coarse_coboundary(nc),
        edges,
        boundary_row: red.boundary_row,
    })
}

/// Coarse-edge flux `N(û)` with its Jacobian (n1c × n0c).
pub trait CoarseFlux {
    fn eval(&self, u: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64>;
}

/// `N ≡ 0`.
pub struct ZeroFlux(pub usize);

impl CoarseFlux for ZeroFlux {
    fn eval(&self, _u: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.0)
    }

    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.0, u.len())
    }
}

/// `H(û) = ε δᵀM1δ û + δᵀM1 N(û) − M0 f̂`, boundary row `û_b − g`.
pub fn reduced_residual(u: &DVector<f64>, f: &DVector<f64>, eps: f64, flux: &dyn CoarseFlux, g: f64, cc: &CoarseComplex) -> Result<DVector<f64>> {
    let n = cc.n0();
    if u.len() != n || f.len() != n {
        return Err(Error::Argument(format!("expected coarse vectors of length {n}, got {} and {}", u.len(), f.len())));
    }
    let nflux = flux.eval(u);
    if nflux.len() != cc.n1() {
        return Err(Error::Argument(format!("flux has length {}, expected {}", nflux.len(), cc.n1())));
    }
    let dt_m1 = cc.d0.transpose() * &cc.m1;
    let mut h = &dt_m1 * (&cc.d0 * u * eps + nflux) - &cc.m0 * f;
    h[cc.boundary_row] = u[cc.boundary_row] - g;
    Ok(h)
}

/// `∂H/∂û`.
pub fn reduced_jacobian(u: &DVector<f64>, eps: f64, flux: &dyn CoarseFlux, cc: &CoarseComplex) -> DMatrix<f64> {
    let dt_m1 = cc.d0.transpose() * &cc.m1;
    let mut j = &dt_m1 * (&cc.d0 * eps + flux.jacobian(u));
    let b = cc.boundary_row;
    j.row_mut(b).fill(0.0);
    j[(b, b)] = 1.0;
    j
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 30,
            tol: 1e-8,
            max_halvings: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub u: DVector<f64>,
    pub f: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Solves `J x = r`, shifting `J + μI` (Levenberg) when the LU is singular.
pub fn solve_regularized(j: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(x) = j.clone().lu().solve(r) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let scale = j.amax().max(1e-300);
    let mut mu = 1e-10 * scale;
    for _ in 0..8 {
        let shifted = j + DMatrix::identity(j.nrows(), j.ncols()) * mu;
        if let Some(x) = shifted.lu().solve(r) {
            if x.iter().all(|v| v.is_finite()) {
                log::debug!("levenberg shift {mu:.2e} used");
                return Ok(x);
            }
        }
        mu *= 100.0;
    }
    Err(Error::Singular("reduced Jacobian singular even after Levenberg shifts".into()))
}

/// Damped Newton from `u0` (zero when `None`).
pub fn solve_reduced(
    cc: &CoarseComplex,
    eps: f64,
    flux: &dyn CoarseFlux,
    f: &DVector<f64>,
    g: f64,
    u0: Option<&DVector<f64>>,
    opts: &NewtonOptions,
) -> Result<ReducedState> {
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("diffusivity must be positive, got {eps}")));
    }
    let mut u = u0.cloned().unwrap_or_else(|| DVector::zeros(cc.n0()));
    let mut h = reduced_residual(&u, f, eps, flux, g, cc)?;
    let mut hn = h.norm();
    let mut history = vec![hn];
    for it in 0..opts.max_iter {
        if hn <= opts.tol {
            return Ok(ReducedState { u, f: f.clone(), iterations: it, residual: hn, history, converged: true });
        }
        let j = reduced_jacobian(&u, eps, flux, cc);
        let step = match solve_regularized(&j, &h) {
            Ok(s) => s,
            Err(e) => {
                log::debug!("newton: {e}");
                return Err(Error::NonConvergence { iterations: it, residual: hn, last: u.as_slice().to_vec(), history });
            }
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = &u - &step * t;
            let ht = reduced_residual(&trial, f, eps, flux, g, cc)?;
            let n = ht.norm();
            if n.is_finite() && n < hn {
                accepted = Some((trial, ht, n));
                break;
            }
            t *= 0.5;
        }
        let (nu, nh, nn) = accepted.unwrap_or_else(|| {
            // no decrease along the damped direction: take the smallest step
            let trial = &u - &step * t;
            let ht = reduced_residual(&trial, f, eps, flux, g, cc).expect("shapes checked");
            let n = ht.norm();
            (trial, ht, n)
        });
        u = nu;
        h = nh;
        hn = nn;
        history.push(hn);
    }
    if hn <= opts.tol {
        return Ok(ReducedState { u, f: f.clone(), iterations: opts.max_iter, residual: hn, history, converged: true });
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, residual: hn, last: u.as_slice().to_vec(), history })
}

/// `Wᵀ c`.
pub fn pullback(red: &ReductionMap, coarse: &DVector<f64>) -> Cochain0 {
    (red.w.transpose() * coarse).as_slice().to_vec()
}
