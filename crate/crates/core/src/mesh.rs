//! Conforming 2-D triangulations.
//!
//! Edges carry a global orientation from the lower to the higher vertex index.
//! Local edge `k` of a triangle is the edge opposite local vertex `k`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geodesy;

pub type Point = [f64; 2];

/// Largest mesh the internal generators will produce.
pub const DEFAULT_ELEMENT_BUDGET: usize = 2_000_000;

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * cross(sub(b, a), sub(c, a))
}

/// A point located inside a triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub triangle: usize,
    pub bary: [f64; 3],
}

#[derive(Debug, Clone)]
struct BucketGrid {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl BucketGrid {
    fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let fx = (p[0] - self.origin[0]) / self.cell;
        let fy = (p[1] - self.origin[1]) / self.cell;
        if !(fx.is_finite() && fy.is_finite()) || fx < -1e-9 || fy < -1e-9 {
            return None;
        }
        let ix = (fx.max(0.0) as usize).min(self.nx - 1);
        let iy = (fy.max(0.0) as usize).min(self.ny - 1);
        if fx > self.nx as f64 + 1e-9 || fy > self.ny as f64 + 1e-9 {
            return None;
        }
        Some((ix, iy))
    }
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    tri_edges: Vec<[usize; 3]>,
    edge_tris: Vec<[Option<usize>; 2]>,
    boundary_vertex: Vec<bool>,
    boundary_edge: Vec<bool>,
    tagged: Option<Vec<bool>>,
    vertex_tris: Vec<Vec<usize>>,
    vertex_nbrs: Vec<Vec<usize>>,
    areas: Vec<f64>,
    grid: BucketGrid,
}

impl TriMesh {
    /// Builds a mesh, flipping clockwise triangles and validating manifoldness.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        Self::with_tags(vertices, triangles, None)
    }

    /// As [`TriMesh::new`] with explicit boundary tags (e.g. Dirichlet vertices).
    pub fn with_tags(
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        tags: Option<Vec<usize>>,
    ) -> Result<Self> {
        let nv = vertices.len();
        if triangles.is_empty() {
            return Err(Error::Validation("mesh has no triangles".into()));
        }
        for (t, tri) in triangles.iter_mut().enumerate() {
            for &v in tri.iter() {
                if v >= nv {
                    return Err(Error::Validation(format!(
                        "triangle {t} references vertex {v} but only {nv} vertices exist"
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Validation(format!("triangle {t} repeats a vertex")));
            }
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a < 0.0 {
                tri.swap(1, 2);
            } else if a == 0.0 {
                return Err(Error::Validation(format!("triangle {t} has zero area")));
            }
        }

        let mut edge_map: HashMap<[usize; 2], Vec<usize>> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                edge_map.entry([a.min(b), a.max(b)]).or_default().push(t);
            }
        }
        let mut edges: Vec<[usize; 2]> = edge_map.keys().copied().collect();
        edges.sort_unstable();
        let mut edge_index = HashMap::with_capacity(edges.len());
        let mut edge_tris = Vec::with_capacity(edges.len());
        for (e, key) in edges.iter().enumerate() {
            let ts = &edge_map[key];
            if ts.len() > 2 {
                return Err(Error::Validation(format!(
                    "non-manifold edge {} ({} -> {}) shared by {} triangles",
                    e,
                    key[0],
                    key[1],
                    ts.len()
                )));
            }
            edge_index.insert(*key, e);
            edge_tris.push([Some(ts[0]), ts.get(1).copied()]);
        }
        let tri_edges: Vec<[usize; 3]> = triangles
            .iter()
            .map(|tri| {
                let mut out = [0; 3];
                for (k, slot) in out.iter_mut().enumerate() {
                    let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                    *slot = edge_index[&[a.min(b), a.max(b)]];
                }
                out
            })
            .collect();

        let boundary_edge: Vec<bool> = edge_tris.iter().map(|t| t[1].is_none()).collect();
        let mut boundary_vertex = vec![false; nv];
        for (e, &b) in boundary_edge.iter().enumerate() {
            if b {
                boundary_vertex[edges[e][0]] = true;
                boundary_vertex[edges[e][1]] = true;
            }
        }

        let mut vertex_tris = vec![Vec::new(); nv];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_tris[v].push(t);
            }
        }
        if let Some(v) = vertex_tris.iter().position(|ts| ts.is_empty()) {
            return Err(Error::Validation(format!(
                "vertex {v} is not used by any triangle"
            )));
        }
        let mut vertex_nbrs = vec![Vec::new(); nv];
        for e in &edges {
            vertex_nbrs[e[0]].push(e[1]);
            vertex_nbrs[e[1]].push(e[0]);
        }

        let tagged = match tags {
            None => None,
            Some(list) => {
                let mut flags = vec![false; nv];
                for v in list {
                    if v >= nv {
                        return Err(Error::Validation(format!(
                            "boundary tag references vertex {v} out of range"
                        )));
                    }
                    flags[v] = true;
                }
                Some(flags)
            }
        };

        let areas: Vec<f64> = triangles
            .iter()
            .map(|t| signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]))
            .collect();
        let grid = build_grid(&vertices, &triangles);

        Ok(Self {
            vertices,
            triangles,
            edges,
            tri_edges,
            edge_tris,
            boundary_vertex,
            boundary_edge,
            tagged,
            vertex_tris,
            vertex_nbrs,
            areas,
            grid,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Point {
        self.vertices[i]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t]
    }

    /// Triangles adjacent to an edge; the second slot is `None` on the boundary.
    pub fn edge_triangles(&self, e: usize) -> [Option<usize>; 2] {
        self.edge_tris[e]
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn boundary_vertex_flags(&self) -> &[bool] {
        &self.boundary_vertex
    }

    pub fn boundary_edge_flags(&self) -> &[bool] {
        &self.boundary_edge
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    /// Explicitly tagged vertices from the mesh file, if any.
    pub fn tagged_vertices(&self) -> Option<&[bool]> {
        self.tagged.as_deref()
    }

    /// Vertices carrying Dirichlet data: explicit tags when present, else the
    /// topological boundary.
    pub fn dirichlet_flags(&self) -> &[bool] {
        self.tagged.as_deref().unwrap_or(&self.boundary_vertex)
    }

    pub fn vertex_triangles(&self, v: usize) -> &[usize] {
        &self.vertex_tris[v]
    }

    pub fn vertex_neighbors(&self, v: usize) -> &[usize] {
        &self.vertex_nbrs[v]
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let tri = self.triangles[t];
        [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ]
    }

    /// Constant gradients of the three barycentric coordinates of triangle `t`.
    pub fn bary_gradients(&self, t: usize) -> [Point; 3] {
        let [p0, p1, p2] = self.triangle_points(t);
        let two_a = 2.0 * self.areas[t];
        // grad λ_k = rot90(p_{k+2} - p_{k+1}) / (2A)
        let g = |a: Point, b: Point| [(a[1] - b[1]) / two_a, (b[0] - a[0]) / two_a];
        [g(p1, p2), g(p2, p0), g(p0, p1)]
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangle_points(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Point from barycentric coordinates.
    pub fn point_at(&self, loc: &Location) -> Point {
        let [a, b, c] = self.triangle_points(loc.triangle);
        let l = loc.bary;
        [
            l[0] * a[0] + l[1] * b[0] + l[2] * c[0],
            l[0] * a[1] + l[1] * b[1] + l[2] * c[1],
        ]
    }

    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.triangle_points(t);
        let inv = 1.0 / (2.0 * self.areas[t]);
        let l0 = cross(sub(b, p), sub(c, p)) * inv;
        let l1 = cross(sub(c, p), sub(a, p)) * inv;
        [l0, l1, 1.0 - l0 - l1]
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| dist(self.vertices[e[0]], self.vertices[e[1]]))
            .fold(0.0, f64::max)
    }

    pub fn mean_edge_length(&self) -> f64 {
        let s: f64 = self
            .edges
            .iter()
            .map(|e| dist(self.vertices[e[0]], self.vertices[e[1]]))
            .sum();
        s / self.edges.len() as f64
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices() as i64 - self.n_edges() as i64 + self.n_triangles() as i64
    }

    /// Locates `p` in the closed domain; points on edges belong to one of the
    /// adjacent triangles.
    pub fn locate(&self, p: Point) -> Option<Location> {
        let (ix, iy) = self.grid.cell_of(p)?;
        let tol = 1e-10;
        let mut best: Option<Location> = None;
        let mut best_min = f64::NEG_INFINITY;
        // neighbouring buckets guard against rounding at bucket seams
        for jy in iy.saturating_sub(1)..=(iy + 1).min(self.grid.ny - 1) {
            for jx in ix.saturating_sub(1)..=(ix + 1).min(self.grid.nx - 1) {
                for &t in &self.grid.buckets[jy * self.grid.nx + jx] {
                    let l = self.barycentric(t, p);
                    let m = l[0].min(l[1]).min(l[2]);
                    if m >= -tol && m > best_min {
                        best_min = m;
                        best = Some(Location {
                            triangle: t,
                            bary: [l[0].max(0.0), l[1].max(0.0), l[2].max(0.0)],
                        });
                    }
                }
            }
            if best_min >= 0.0 {
                break;
            }
        }
        best.map(|mut loc| {
            let s: f64 = loc.bary.iter().sum();
            loc.bary.iter_mut().for_each(|b| *b /= s);
            loc
        })
    }

    pub fn contains(&self, p: Point) -> bool {
        self.locate(p).is_some()
    }

    /// P1 interpolation of nodal `values` at `p`.
    pub fn interpolate(&self, values: &[f64], p: Point) -> Option<f64> {
        let loc = self.locate(p)?;
        Some(self.interpolate_at(values, &loc))
    }

    pub fn interpolate_at(&self, values: &[f64], loc: &Location) -> f64 {
        let tri = self.triangles[loc.triangle];
        (0..3).map(|k| loc.bary[k] * values[tri[k]]).sum()
    }

    /// Whether the closed segment `a`–`b` lies in the closed domain.
    pub fn segment_inside(&self, a: Point, b: Point) -> bool {
        if !self.contains(a) || !self.contains(b) {
            return false;
        }
        let d = sub(b, a);
        let mut ts = vec![0.0, 1.0];
        for (e, &is_b) in self.boundary_edge.iter().enumerate() {
            if !is_b {
                continue;
            }
            let p = self.vertices[self.edges[e][0]];
            let q = self.vertices[self.edges[e][1]];
            let r = sub(q, p);
            let den = cross(d, r);
            let ap = sub(p, a);
            if den.abs() < 1e-300 {
                continue;
            }
            let t = cross(ap, r) / den;
            let s = cross(ap, d) / den;
            if (-1e-12..=1.0 + 1e-12).contains(&t) && (-1e-12..=1.0 + 1e-12).contains(&s) {
                ts.push(t.clamp(0.0, 1.0));
            }
        }
        ts.sort_by(|x, y| x.total_cmp(y));
        ts.windows(2).all(|w| {
            if w[1] - w[0] < 1e-12 {
                return true;
            }
            self.contains(lerp(a, b, 0.5 * (w[0] + w[1])))
        })
    }

    /// Nearest vertex by Euclidean distance.
    pub fn nearest_vertex(&self, p: Point) -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, v) in self.vertices.iter().enumerate() {
            let d = dist(*v, p);
            if d < bd {
                bd = d;
                best = i;
            }
        }
        best
    }

    /// Closest point of the closed domain to `p` (identity for inside points).
    pub fn project_into(&self, p: Point) -> Point {
        if self.contains(p) {
            return p;
        }
        let mut best = p;
        let mut bd = f64::INFINITY;
        for (e, &is_b) in self.boundary_edge.iter().enumerate() {
            if !is_b {
                continue;
            }
            let a = self.vertices[self.edges[e][0]];
            let b = self.vertices[self.edges[e][1]];
            let ab = sub(b, a);
            let t = (dot(sub(p, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
            let q = lerp(a, b, t);
            let d = dist(p, q);
            if d < bd {
                bd = d;
                best = q;
            }
        }
        best
    }

    /// Bounding box as (min, max).
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// SHA-256 over the mesh text serialization.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    /// Serializes to the text mesh format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.n_vertices(), self.n_triangles());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", v[0], v[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        if let Some(tags) = &self.tagged {
            for (i, &f) in tags.iter().enumerate() {
                if f {
                    let _ = writeln!(s, "b {i}");
                }
            }
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Per-vertex distance to the boundary vertex set, by fast marching.
    pub fn boundary_distance_field(&self) -> Vec<f64> {
        let seeds: Vec<(usize, f64)> = self
            .boundary_vertex
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i, 0.0))
            .collect();
        geodesy::fast_march(self, &seeds)
    }
}

fn build_grid(vertices: &[Point], triangles: &[[usize; 3]]) -> BucketGrid {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for v in vertices {
        for k in 0..2 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let w = (hi[0] - lo[0]).max(1e-12);
    let h = (hi[1] - lo[1]).max(1e-12);
    let target = (triangles.len() as f64).sqrt().max(1.0);
    let cell = (w.max(h) / target).max(1e-12);
    let nx = ((w / cell).ceil() as usize).max(1);
    let ny = ((h / cell).ceil() as usize).max(1);
    let mut buckets = vec![Vec::new(); nx * ny];
    let clampi = |f: f64, n: usize| (f.max(0.0) as usize).min(n - 1);
    for (t, tri) in triangles.iter().enumerate() {
        let mut tlo = [f64::INFINITY; 2];
        let mut thi = [f64::NEG_INFINITY; 2];
        for &v in tri {
            for k in 0..2 {
                tlo[k] = tlo[k].min(vertices[v][k]);
                thi[k] = thi[k].max(vertices[v][k]);
            }
        }
        let x0 = clampi((tlo[0] - lo[0]) / cell, nx);
        let x1 = clampi((thi[0] - lo[0]) / cell, nx);
        let y0 = clampi((tlo[1] - lo[1]) / cell, ny);
        let y1 = clampi((thi[1] - lo[1]) / cell, ny);
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                buckets[iy * nx + ix].push(t);
            }
        }
    }
    BucketGrid {
        origin: lo,
        cell,
        nx,
        ny,
        buckets,
    }
}

/// Disk mesh by structured polar refinement: ring `k` holds `6k` vertices at
/// radius `k·R/n`, consecutive rings are stitched by angular merge, and the
/// outer ring lies exactly on the circle.
pub fn generate_disk_mesh(radius: f64, target_h: f64) -> Result<TriMesh> {
    generate_disk_mesh_with_budget(radius, target_h, DEFAULT_ELEMENT_BUDGET)
}

pub fn generate_disk_mesh_with_budget(
    radius: f64,
    target_h: f64,
    max_triangles: usize,
) -> Result<TriMesh> {
    if !(radius > 0.0) {
        return Err(Error::Argument(format!("radius must be positive, got {radius}")));
    }
    if !(target_h > 0.0 && target_h < radius) {
        return Err(Error::Argument(format!(
            "target_h must lie in (0, radius), got {target_h}"
        )));
    }
    let rings = (radius / target_h).ceil() as usize;
    let n_tri = 6usize.saturating_mul(rings).saturating_mul(rings);
    if n_tri > max_triangles {
        return Err(Error::Capacity(format!(
            "disk mesh with h={target_h} needs {n_tri} triangles (budget {max_triangles})"
        )));
    }

    let mut vertices = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize];
    for k in 1..=rings {
        ring_start.push(vertices.len());
        let r = radius * k as f64 / rings as f64;
        let n = 6 * k;
        for j in 0..n {
            let th = std::f64::consts::TAU * j as f64 / n as f64;
            let p = if k == rings {
                // exactly on the circle up to rounding of sin/cos
                [radius * th.cos(), radius * th.sin()]
            } else {
                [r * th.cos(), r * th.sin()]
            };
            vertices.push(p);
        }
    }

    let mut triangles = Vec::with_capacity(n_tri);
    for j in 0..6 {
        triangles.push([0, 1 + j, 1 + (j + 1) % 6]);
    }
    for k in 2..=rings {
        let ni = 6 * (k - 1);
        let no = 6 * k;
        let si = ring_start[k - 1];
        let so = ring_start[k];
        let (mut i, mut o) = (0usize, 0usize);
        let inner = |x: usize| si + x % ni;
        let outer = |x: usize| so + x % no;
        while i < ni || o < no {
            // advance the ring whose new diagonal is shorter
            let via_outer = dist(vertices[inner(i)], vertices[outer(o + 1)]);
            let via_inner = dist(vertices[inner(i + 1)], vertices[outer(o)]);
            if o < no && (i >= ni || via_outer <= via_inner) {
                triangles.push([inner(i), outer(o), outer(o + 1)]);
                o += 1;
            } else {
                triangles.push([inner(i), outer(o), inner(i + 1)]);
                i += 1;
            }
        }
    }
    TriMesh::new(vertices, triangles)
}

/// Structured grid mesh over `[x0,x1]×[y0,y1]` keeping the cells whose centre
/// satisfies `keep`. Each cell is split along its rising diagonal.
pub fn generate_grid_mesh(
    lo: Point,
    hi: Point,
    nx: usize,
    ny: usize,
    keep: impl Fn(Point) -> bool,
) -> Result<TriMesh> {
    if nx == 0 || ny == 0 || !(hi[0] > lo[0] && hi[1] > lo[1]) {
        return Err(Error::Argument("grid mesh needs a non-empty box".into()));
    }
    if 2 * nx * ny > DEFAULT_ELEMENT_BUDGET {
        return Err(Error::Capacity(format!("grid {nx}x{ny} exceeds element budget")));
    }
    let dx = (hi[0] - lo[0]) / nx as f64;
    let dy = (hi[1] - lo[1]) / ny as f64;
    let mut id = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut vid = |i: usize, j: usize, vertices: &mut Vec<Point>| {
        let k = j * (nx + 1) + i;
        if id[k] == usize::MAX {
            id[k] = vertices.len();
            vertices.push([lo[0] + i as f64 * dx, lo[1] + j as f64 * dy]);
        }
        id[k]
    };
    for j in 0..ny {
        for i in 0..nx {
            let c = [lo[0] + (i as f64 + 0.5) * dx, lo[1] + (j as f64 + 0.5) * dy];
            if !keep(c) {
                continue;
            }
            let a = vid(i, j, &mut vertices);
            let b = vid(i + 1, j, &mut vertices);
            let cc = vid(i + 1, j + 1, &mut vertices);
            let d = vid(i, j + 1, &mut vertices);
            triangles.push([a, b, cc]);
            triangles.push([a, cc, d]);
        }
    }
    TriMesh::new(vertices, triangles)
}

/// U-shaped domain: the square `[0,3]²` with the slot `[1,2]×[1,3]` removed.
/// The arm tips sit near `(0.5, 3)` and `(2.5, 3)`.
pub fn generate_u_mesh(h: f64) -> Result<TriMesh> {
    let n = ((3.0 / h).ceil() as usize).max(3);
    let n = n.div_ceil(3) * 3;
    generate_grid_mesh([0.0, 0.0], [3.0, 3.0], n, n, |c| {
        !(c[0] > 1.0 && c[0] < 2.0 && c[1] > 1.0)
    })
}

/// L-shaped domain: `[0,2]²` minus the upper-right quadrant `[1,2]×[1,2]`.
pub fn generate_l_mesh(h: f64) -> Result<TriMesh> {
    let n = ((2.0 / h).ceil() as usize).max(2);
    let n = n.div_ceil(2) * 2;
    generate_grid_mesh([0.0, 0.0], [2.0, 2.0], n, n, |c| !(c[0] > 1.0 && c[1] > 1.0))
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Parses the text mesh format: `NV NT`, `NV` coordinate lines, `NT` index
/// triples, then optional `b v` boundary tags.
pub fn parse_mesh(text: &str) -> Result<TriMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let perr = |line: usize, msg: String| Error::Parse { line, msg };
    let (hl, header) = lines
        .next()
        .ok_or_else(|| perr(1, "empty mesh file".into()))?;
    let counts: Vec<&str> = header.split_whitespace().collect();
    if counts.len() != 2 {
        return Err(perr(hl, format!("expected `NV NT`, found `{header}`")));
    }
    let nv: usize = counts[0]
        .parse()
        .map_err(|_| perr(hl, format!("bad vertex count `{}`", counts[0])))?;
    let nt: usize = counts[1]
        .parse()
        .map_err(|_| perr(hl, format!("bad triangle count `{}`", counts[1])))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| perr(hl, format!("expected {nv} vertex lines, file ended")))?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 2 {
            return Err(perr(ln, format!("expected `x y`, found `{l}`")));
        }
        let x: f64 = f[0].parse().map_err(|_| perr(ln, format!("bad number `{}`", f[0])))?;
        let y: f64 = f[1].parse().map_err(|_| perr(ln, format!("bad number `{}`", f[1])))?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(perr(ln, "non-finite coordinate".into()));
        }
        vertices.push([x, y]);
    }
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| perr(hl, format!("expected {nt} triangle lines, file ended")))?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(perr(ln, format!("expected `i j k`, found `{l}`")));
        }
        let mut t = [0usize; 3];
        for (slot, s) in t.iter_mut().zip(&f) {
            *slot = s.parse().map_err(|_| perr(ln, format!("bad index `{s}`")))?;
            if *slot >= nv {
                return Err(perr(ln, format!("index {} out of range (NV = {nv})", *slot)));
            }
        }
        triangles.push(t);
    }
    let mut tags = Vec::new();
    for (ln, l) in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 2 || f[0] != "b" {
            return Err(perr(ln, format!("expected `b v_index`, found `{l}`")));
        }
        let v: usize = f[1].parse().map_err(|_| perr(ln, format!("bad index `{}`", f[1])))?;
        if v >= nv {
            return Err(perr(ln, format!("boundary index {v} out of range")));
        }
        tags.push(v);
    }
    TriMesh::with_tags(vertices, triangles, (!tags.is_empty()).then_some(tags))
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const SQUARE: &str = "4 2\n0 0\n1 0\n1 1\n0 1\n0 1 2\n0 2 3\n";

    #[test]
    fn square_file_counts() {
        let m = parse_mesh(SQUARE).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_edges(), 5);
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.boundary_edge_flags().iter().filter(|&&b| b).count(), 4);
        assert!(m.boundary_vertex_flags().iter().all(|&b| b));
        assert_eq!(m.euler_characteristic(), 1);
    }

    #[test]
    fn clockwise_triangle_is_flipped() {
        let m = parse_mesh("3 1\n0 0\n0 1\n1 0\n0 1 2\n").unwrap();
        assert!(m.area(0) > 0.0);
        assert!((m.area(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn edge_shared_by_three_triangles_is_rejected() {
        let text = "5 3\n0 0\n1 0\n0 1\n0 -1\n2 1\n0 1 2\n0 3 1\n0 1 4\n";
        match parse_mesh(text) {
            Err(Error::Validation(msg)) => assert!(msg.contains("0 -> 1"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_file_reports_line() {
        match parse_mesh("3 1\n0 0\n0 x\n1 0\n0 1 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn tags_round_trip() {
        let m = parse_mesh(&format!("{SQUARE}b 0\nb 1\n")).unwrap();
        let tags = m.tagged_vertices().unwrap();
        assert_eq!(tags, &[true, true, false, false]);
        let again = parse_mesh(&m.to_text()).unwrap();
        assert_eq!(again.tagged_vertices().unwrap(), tags);
        assert_eq!(again.content_hash(), m.content_hash());
    }

    #[test]
    fn coarse_disk() {
        let m = generate_disk_mesh(1.0, 0.5).unwrap();
        assert!(m.n_triangles() >= 4);
        assert!(m.areas().iter().all(|&a| a > 0.0));
        assert_eq!(m.euler_characteristic(), 1);
    }

    #[test]
    fn disk_invariants() {
        for &h in &[0.2, 0.1, 0.05] {
            let m = generate_disk_mesh(1.0, h).unwrap();
            assert!(m.max_edge_length() <= 1.5 * h, "h={h}: {}", m.max_edge_length());
            for (i, v) in m.vertices().iter().enumerate() {
                if m.is_boundary_vertex(i) {
                    assert!((norm(*v) - 1.0).abs() <= 1e-9);
                }
            }
            assert_eq!(m.euler_characteristic(), 1);
            for e in 0..m.n_edges() {
                let n = m.edge_triangles(e).iter().flatten().count();
                assert_eq!(n, if m.boundary_edge_flags()[e] { 1 } else { 2 });
            }
        }
    }

    #[test]
    fn disk_vertex_count_order_1e3() {
        let m = generate_disk_mesh(1.0, 0.05).unwrap();
        assert!((500..5000).contains(&m.n_vertices()), "{}", m.n_vertices());
    }

    #[test]
    fn disk_area_converges() {
        let e1 = (generate_disk_mesh(1.0, 0.1).unwrap().total_area() - PI).abs() / PI;
        let e2 = (generate_disk_mesh(1.0, 0.05).unwrap().total_area() - PI).abs() / PI;
        assert!(e1 < 0.02);
        assert!(e2 < e1);
    }

    #[test]
    fn capacity_error() {
        assert!(matches!(
            generate_disk_mesh_with_budget(1.0, 0.001, 10_000),
            Err(Error::Capacity(_))
        ));
        assert!(matches!(generate_disk_mesh(1.0, 1.5), Err(Error::Argument(_))));
    }

    #[test]
    fn locate_and_interpolate() {
        let m = generate_disk_mesh(1.0, 0.2).unwrap();
        let f: Vec<f64> = m.vertices().iter().map(|v| 2.0 * v[0] - v[1] + 0.5).collect();
        for p in [[0.1, 0.2], [-0.5, 0.3], [0.0, 0.0], [0.7, -0.6]] {
            let v = m.interpolate(&f, p).unwrap();
            assert!((v - (2.0 * p[0] - p[1] + 0.5)).abs() < 1e-12);
        }
        assert!(m.locate([1.2, 0.0]).is_none());
        assert!(m.locate([1.0, 0.0]).is_some());
    }

    #[test]
    fn u_domain_segments() {
        let m = generate_u_mesh(0.25).unwrap();
        assert_eq!(m.euler_characteristic(), 1);
        assert!(m.segment_inside([0.5, 0.5], [2.5, 0.5]));
        assert!(!m.segment_inside([0.5, 2.9], [2.5, 2.9]));
        assert!(m.segment_inside([0.5, 2.9], [0.5, 0.2]));
        // grazing the reflex corner (1,1) stays inside the closed domain
        assert!(m.segment_inside([0.5, 1.5], [1.5, 0.5]));
        assert!(!m.contains([1.5, 2.0]));
    }

    #[test]
    fn boundary_distance_on_disk() {
        let m = generate_disk_mesh(1.0, 0.05).unwrap();
        let d = m.boundary_distance_field();
        for (i, &di) in d.iter().enumerate() {
            assert!(di >= 0.0);
            assert_eq!(di == 0.0, m.is_boundary_vertex(i));
        }
        assert!((d[0] - 1.0).abs() <= 0.02, "centre distance {}", d[0]);
        // 1-Lipschitz along edges (with a small fast-marching allowance)
        for e in m.edges() {
            let l = dist(m.vertex(e[0]), m.vertex(e[1]));
            assert!((d[e[0]] - d[e[1]]).abs() <= l * (1.0 + 1e-6));
        }
    }
}
