//! Lowest-order Whitney complex on a triangle mesh: P1 hat functions for
//! 0-forms, Whitney edge functions for 1-forms, and the signed incidence
//! matrix between them.

use crate::error::{Error, Result};
use crate::mesh::{dot, Point, TriMesh};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Nodal coefficients, one per vertex.
pub type Cochain0 = Vec<f64>;
/// Tangential edge coefficients, one per oriented edge.
pub type Cochain1 = Vec<f64>;

#[derive(Debug, Clone)]
pub struct FineComplex {
    pub m0: CsrMatrix,
    pub m1: CsrMatrix,
    pub d0: CsrMatrix,
    /// Row sums of `m0`.
    pub lumped: Vec<f64>,
}

impl FineComplex {
    pub fn assemble(mesh: &TriMesh) -> Result<Self> {
        let m0 = assemble_mass0(mesh);
        let m1 = assemble_mass1(mesh)?;
        let d0 = coboundary0(mesh);
        let lumped = m0.row_sums();
        Ok(Self { m0, m1, d0, lumped })
    }

    /// `∫ f dΩ` for a P1 field.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.lumped.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// `aᵀ M0 b`.
    pub fn inner0(&self, a: &[f64], b: &[f64]) -> f64 {
        self.m0.mul_vec(b).iter().zip(a).map(|(x, y)| x * y).sum()
    }

    pub fn l2_norm(&self, a: &[f64]) -> f64 {
        self.inner0(a, a).max(0.0).sqrt()
    }
}

/// `∫ λ_p λ_q` over a triangle of area `area`.
#[inline]
pub fn p1_mass_local(area: f64, p: usize, q: usize) -> f64 {
    if p == q {
        area / 6.0
    } else {
        area / 12.0
    }
}

pub fn assemble_mass0(mesh: &TriMesh) -> CsrMatrix {
    let mut b = TripletBuilder::with_capacity(mesh.n_vertices(), mesh.n_vertices(), 9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.area(t);
        for p in 0..3 {
            for q in 0..3 {
                b.push(tri[p], tri[q], p1_mass_local(a, p, q));
            }
        }
    }
    b.build()
}

/// Direct P1 stiffness `∫ ∇φ_i · ∇φ_j`.
pub fn assemble_stiffness_p1(mesh: &TriMesh) -> CsrMatrix {
    let mut b = TripletBuilder::with_capacity(mesh.n_vertices(), mesh.n_vertices(), 9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.area(t);
        let g = mesh.bary_gradients(t);
        for p in 0..3 {
            for q in 0..3 {
                b.push(tri[p], tri[q], a * dot(g[p], g[q]));
            }
        }
    }
    b.build()
}

/// Local endpoints of local edge `k` (opposite local vertex `k`), ordered by
/// the global orientation, with the sign relating the two.
pub fn local_edge(tri: &[usize; 3], k: usize) -> (usize, usize) {
    let a = (k + 1) % 3;
    let b = (k + 2) % 3;
    if tri[a] < tri[b] {
        (a, b)
    } else {
        (b, a)
    }
}

/// Local Whitney 1-form mass matrix in global edge orientation, indexed by
/// local edge number.
pub fn whitney_mass_local(area: f64, g: &[Point; 3], tri: &[usize; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    let ends: [(usize, usize); 3] = std::array::from_fn(|k| local_edge(tri, k));
    for (e, &(a, b)) in ends.iter().enumerate() {
        for (f, &(c, d)) in ends.iter().enumerate() {
            // (λa∇λb − λb∇λa)·(λc∇λd − λd∇λc)
            m[e][f] = p1_mass_local(area, a, c) * dot(g[b], g[d])
                - p1_mass_local(area, a, d) * dot(g[b], g[c])
                - p1_mass_local(area, b, c) * dot(g[a], g[d])
                + p1_mass_local(area, b, d) * dot(g[a], g[c]);
        }
    }
    m
}

pub fn assemble_mass1(mesh: &TriMesh) -> Result<CsrMatrix> {
    let n = mesh.n_edges();
    let mean = mesh.total_area() / mesh.n_triangles() as f64;
    let mut b = TripletBuilder::with_capacity(n, n, 9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.area(t);
        if !(a > 1e-14 * mean) {
            return Err(Error::Assembly(format!(
                "degenerate triangle {t} (area {a:.3e}, mean {mean:.3e})"
            )));
        }
        let g = mesh.bary_gradients(t);
        let m = whitney_mass_local(a, &g, tri);
        let te = mesh.triangle_edges(t);
        for e in 0..3 {
            for f in 0..3 {
                b.push(te[e], te[f], m[e][f]);
            }
        }
    }
    Ok(b.build())
}

/// Signed incidence: −1 on the low-index tail, +1 on the high-index head.
pub fn coboundary0(mesh: &TriMesh) -> CsrMatrix {
    let mut b = TripletBuilder::with_capacity(mesh.n_edges(), mesh.n_vertices(), 2 * mesh.n_edges());
    for (e, &[lo, hi]) in mesh.edges().iter().enumerate() {
        b.push(e, lo, -1.0);
        b.push(e, hi, 1.0);
    }
    b.build()
}

/// Value of the 1-form with coefficients `c` at barycentric point `l` of triangle `t`.
pub fn eval_one_form(mesh: &TriMesh, t: usize, c: &[f64], l: [f64; 3]) -> Point {
    let tri = mesh.triangles()[t];
    let g = mesh.bary_gradients(t);
    let te = mesh.triangle_edges(t);
    let mut v = [0.0; 2];
    for k in 0..3 {
        let (a, b) = local_edge(&tri, k);
        let w = c[te[k]];
        for d in 0..2 {
            v[d] += w * (l[a] * g[b][d] - l[b] * g[a][d]);
        }
    }
    v
}

/// Constant gradient of a P1 field on triangle `t`.
pub fn p1_gradient(mesh: &TriMesh, t: usize, u: &[f64]) -> Point {
    let tri = mesh.triangles()[t];
    let g = mesh.bary_gradients(t);
    let mut v = [0.0; 2];
    for k in 0..3 {
        v[0] += u[tri[k]] * g[k][0];
        v[1] += u[tri[k]] * g[k][1];
    }
    v
}
