//! Geodesic distances, shortest paths and geodesic Voronoi partitions on
//! triangulated planar domains.
//!
//! Distances come from a fast-marching solve of `|∇d| = 1` in which each
//! vertex also carries a virtual source point; a trial vertex that sees the
//! source of a known neighbour along a straight segment takes the exact
//! straight-line value. Off-vertex queries use barycentric interpolation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::mesh::{cross, dist, dot, lerp, norm, sub, Point, TriMesh};

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    d: f64,
    v: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .d
            .total_cmp(&self.d)
            .then_with(|| other.v.cmp(&self.v))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Far,
    Trial,
    Known,
}

/// Plane-wave update of `c` from the known values at `a` and `b`.
///
/// Returns `None` when no upwind plane wave through the segment `ab` reaches
/// `c` (the characteristic foot falls outside the segment).
fn two_point_update(a: Point, ta: f64, b: Point, tb: f64, c: Point) -> Option<f64> {
    let e = sub(b, a);
    let len = norm(e);
    let u = tb - ta;
    if len <= 0.0 || u.abs() >= len {
        return None;
    }
    let ehat = [e[0] / len, e[1] / len];
    let eperp = [-ehat[1], ehat[0]];
    let w = sub(c, a);
    let side = dot(w, eperp);
    if side == 0.0 {
        return None;
    }
    let cu = u / len;
    let s = (1.0 - cu * cu).sqrt() * side.signum();
    let n = [cu * ehat[0] + s * eperp[0], cu * ehat[1] + s * eperp[1]];
    let tc = ta + dot(n, w);
    // trace the characteristic back from c along -n to the line through a,b
    let den = cross(n, e);
    if den.abs() < 1e-300 {
        return None;
    }
    let lam = cross(n, w) / den;
    if !(-1e-12..=1.0 + 1e-12).contains(&lam) {
        return None;
    }
    Some(tc)
}

fn angle_is_obtuse(c: Point, a: Point, b: Point) -> bool {
    dot(sub(a, c), sub(b, c)) < 0.0
}

fn inside_sector(c: Point, a: Point, b: Point, d: Point) -> bool {
    // d strictly between rays c->a and c->b (sector angle < pi)
    let ca = sub(a, c);
    let cb = sub(b, c);
    let cd = sub(d, c);
    let s = cross(ca, cb).signum();
    cross(ca, cd) * s > 0.0 && cross(cd, cb) * s > 0.0
}

/// Fast marching from seed vertices with prescribed values.
///
/// Seeds act as their own anchors. See [`fast_march_anchored`].
pub fn fast_march(mesh: &TriMesh, seeds: &[(usize, f64)]) -> Vec<f64> {
    let anchored: Vec<(usize, f64, Point, f64)> = seeds
        .iter()
        .map(|&(v, d)| (v, d, mesh.vertex(v), d))
        .collect();
    fast_march_anchored(mesh, &anchored)
}

/// Fast marching where every vertex also tracks a virtual source: a point
/// `s` and offset `σ` such that its value is `σ + |x - s|`.
///
/// A trial vertex takes the minimum of the plane-wave triangle update, the
/// edge updates, and `σ + |x - s|` for each known neighbour's anchor that is
/// visible along a straight segment. Anchors are re-rooted at a known vertex
/// when the previous anchor is hidden, so paths bend at reflex corners.
/// Seeds are `(vertex, value, anchor point, anchor offset)`.
pub fn fast_march_anchored(mesh: &TriMesh, seeds: &[(usize, f64, Point, f64)]) -> Vec<f64> {
    let n = mesh.n_vertices();
    let mut t = vec![f64::INFINITY; n];
    let mut anchor: Vec<(Point, f64)> = vec![([0.0, 0.0], f64::INFINITY); n];
    let mut fixed = vec![false; n];
    let mut state = vec![State::Far; n];
    let mut heap = BinaryHeap::new();
    for &(v, d, s, sigma) in seeds {
        if d < t[v] {
            t[v] = d;
            anchor[v] = (s, sigma);
        }
        fixed[v] = true;
        state[v] = State::Trial;
    }
    for (v, &tv) in t.iter().enumerate() {
        if fixed[v] {
            heap.push(HeapItem { d: tv, v });
        }
    }
    let tris = mesh.triangles();
    while let Some(HeapItem { d, v }) = heap.pop() {
        if state[v] == State::Known || d > t[v] {
            continue;
        }
        state[v] = State::Known;
        for &tr in mesh.vertex_triangles(v) {
            let tri = tris[tr];
            for k in 0..3 {
                let c = tri[k];
                if state[c] == State::Known || fixed[c] {
                    continue;
                }
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                let pc = mesh.vertex(c);
                let mut cand = update_from_triangle(mesh, tr, k, a, b, c, &t, &state);
                let mut cand_anchor = None;
                for x in [a, b] {
                    if state[x] != State::Known {
                        continue;
                    }
                    let (s, sigma) = anchor[x];
                    let via_anchor = sigma + dist(s, pc);
                    if via_anchor < t[c] && via_anchor <= cand + 1e-12 && mesh.segment_inside(s, pc) {
                        cand = via_anchor;
                        cand_anchor = Some((s, sigma));
                    }
                }
                if cand < t[c] {
                    t[c] = cand;
                    anchor[c] = cand_anchor.unwrap_or_else(|| {
                        // re-root at the known corner giving the best edge path
                        let x = [a, b]
                            .into_iter()
                            .filter(|&x| state[x] == State::Known)
                            .min_by(|&x, &y| {
                                (t[x] + dist(mesh.vertex(x), pc))
                                    .total_cmp(&(t[y] + dist(mesh.vertex(y), pc)))
                            })
                            .expect("update came from a known vertex");
                        (mesh.vertex(x), t[x])
                    });
                    state[c] = State::Trial;
                    heap.push(HeapItem { d: cand, v: c });
                }
            }
        }
    }
    t
}

#[allow(clippy::too_many_arguments)]
fn update_from_triangle(
    mesh: &TriMesh,
    tr: usize,
    k: usize,
    a: usize,
    b: usize,
    c: usize,
    t: &[f64],
    state: &[State],
) -> f64 {
    let pa = mesh.vertex(a);
    let pb = mesh.vertex(b);
    let pc = mesh.vertex(c);
    let ka = state[a] == State::Known;
    let kb = state[b] == State::Known;
    let mut best = f64::INFINITY;
    if ka {
        best = best.min(t[a] + dist(pa, pc));
    }
    if kb {
        best = best.min(t[b] + dist(pb, pc));
    }
    if ka && kb {
        if let Some(v) = two_point_update(pa, t[a], pb, t[b], pc) {
            best = best.min(v);
        } else if angle_is_obtuse(pc, pa, pb) {
            // virtual split: unfold across the opposite edge looking for a
            // known vertex inside the angular sector at c
            if let Some(v) = unfolded_update(mesh, tr, k, pc, t, state) {
                best = best.min(v);
            }
        }
    }
    best
}

fn unfolded_update(
    mesh: &TriMesh,
    tr: usize,
    k: usize,
    pc: Point,
    t: &[f64],
    state: &[State],
) -> Option<f64> {
    let mut tri_id = tr;
    let mut edge = mesh.triangle_edges(tr)[k];
    let [mut ea, mut eb] = mesh.edges()[edge];
    for _ in 0..4 {
        let [t0, t1] = mesh.edge_triangles(edge);
        let next = if t0 == Some(tri_id) { t1? } else { t0? };
        let nt = mesh.triangles()[next];
        let d = *nt.iter().find(|&&v| v != ea && v != eb)?;
        let pd = mesh.vertex(d);
        let (pa, pb) = (mesh.vertex(ea), mesh.vertex(eb));
        if inside_sector(pc, pa, pb, pd) {
            if state[d] != State::Known {
                return None;
            }
            let mut best = f64::INFINITY;
            for &(x, px) in &[(ea, pa), (eb, pb)] {
                if state[x] == State::Known {
                    if let Some(v) = two_point_update(px, t[x], pd, t[d], pc) {
                        best = best.min(v);
                    }
                }
            }
            return best.is_finite().then_some(best);
        }
        // d outside the sector: continue across the edge of `next` that the
        // sector still sees
        let side_a = cross(sub(pd, pc), sub(pa, pc)).signum()
            == cross(sub(pb, pc), sub(pa, pc)).signum();
        let (na, nb) = if side_a { (d, eb) } else { (ea, d) };
        let e2 = mesh
            .triangle_edges(next)
            .into_iter()
            .find(|&e| {
                let [x, y] = mesh.edges()[e];
                (x == na.min(nb)) && (y == na.max(nb))
            })?;
        tri_id = next;
        edge = e2;
        ea = na;
        eb = nb;
    }
    None
}

/// Per-vertex distance from a source point.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub source: Point,
    pub values: Vec<f64>,
    pub euclidean: bool,
}

impl DistanceField {
    /// Distance at an arbitrary point (exact for Euclidean fields,
    /// interpolated otherwise).
    pub fn at(&self, mesh: &TriMesh, q: Point) -> Result<f64> {
        if self.euclidean {
            return Ok(dist(self.source, q));
        }
        mesh.interpolate(&self.values, q)
            .ok_or_else(|| Error::Lookup(format!("point ({}, {}) outside mesh", q[0], q[1])))
    }

    pub fn vertex(&self, v: usize) -> f64 {
        self.values[v]
    }
}

/// Fast-marching distance field from `source` (a point of the closed domain).
pub fn distance_field(mesh: &TriMesh, source: Point) -> Result<DistanceField> {
    let loc = mesh.locate(source).ok_or_else(|| {
        Error::Lookup(format!(
            "source ({}, {}) lies outside the mesh",
            source[0], source[1]
        ))
    })?;
    let seeds: Vec<(usize, f64, Point, f64)> = mesh.triangles()[loc.triangle]
        .iter()
        .map(|&v| (v, dist(mesh.vertex(v), source), source, 0.0))
        .collect();
    Ok(DistanceField {
        source,
        values: fast_march_anchored(mesh, &seeds),
        euclidean: false,
    })
}

/// Exact Euclidean distance field (convex domains).
pub fn euclidean_field(mesh: &TriMesh, source: Point) -> DistanceField {
    DistanceField {
        source,
        values: mesh.vertices().iter().map(|&v| dist(v, source)).collect(),
        euclidean: true,
    }
}

/// How distances are measured inside the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Geodesy {
    /// Straight-line distances and paths; only valid on convex domains.
    Euclidean,
    /// Fast-marching geodesics.
    #[default]
    Geodesic,
}

impl Geodesy {
    pub fn field(&self, mesh: &TriMesh, source: Point) -> Result<DistanceField> {
        match self {
            Geodesy::Euclidean => {
                if !mesh.contains(source) {
                    return Err(Error::Lookup(format!(
                        "source ({}, {}) lies outside the mesh",
                        source[0], source[1]
                    )));
                }
                Ok(euclidean_field(mesh, source))
            }
            Geodesy::Geodesic => distance_field(mesh, source),
        }
    }

    pub fn path(&self, mesh: &TriMesh, a: Point, b: Point) -> Result<GeodesicPath> {
        match self {
            Geodesy::Euclidean => Ok(GeodesicPath::from_points(vec![a, b], false)),
            Geodesy::Geodesic => shortest_path(mesh, a, b),
        }
    }
}

/// Result of a geodesic Voronoi partition.
#[derive(Debug, Clone)]
pub struct VoronoiPartition {
    pub cell: Vec<usize>,
    pub tie: Vec<bool>,
    pub fields: Vec<DistanceField>,
}

impl VoronoiPartition {
    /// Distance from vertex `v` to its own generator.
    pub fn distance(&self, v: usize) -> f64 {
        self.fields[self.cell[v]].values[v]
    }

    pub fn members(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        self.cell
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == g)
            .map(|(v, _)| v)
    }

    /// Index of the generator nearest to an arbitrary point, if inside the mesh.
    pub fn owner(&self, mesh: &TriMesh, q: Point) -> Option<usize> {
        let mut best = None;
        let mut bd = f64::INFINITY;
        for (g, f) in self.fields.iter().enumerate() {
            let d = f.at(mesh, q).ok()?;
            if d < bd - 1e-12 * bd.max(1.0) {
                bd = d;
                best = Some(g);
            }
        }
        best
    }
}

const TIE_TOL: f64 = 1e-12;

/// Assigns every vertex to its nearest generator; ties go to the lowest index
/// and are flagged.
pub fn voronoi_from_fields(fields: Vec<DistanceField>) -> VoronoiPartition {
    let nv = fields.first().map_or(0, |f| f.values.len());
    let mut cell = vec![0; nv];
    let mut tie = vec![false; nv];
    for v in 0..nv {
        let mut best = 0;
        let mut bd = fields[0].values[v];
        let mut tied = false;
        for (g, f) in fields.iter().enumerate().skip(1) {
            let d = f.values[v];
            let tol = TIE_TOL * bd.abs().max(1.0);
            if d < bd - tol {
                best = g;
                bd = d;
                tied = false;
            } else if (d - bd).abs() <= tol {
                tied = true;
            }
        }
        cell[v] = best;
        tie[v] = tied;
    }
    VoronoiPartition { cell, tie, fields }
}

pub fn geodesic_voronoi(
    mesh: &TriMesh,
    generators: &[Point],
    geodesy: Geodesy,
) -> Result<VoronoiPartition> {
    if generators.is_empty() {
        return Err(Error::Argument("at least one generator is required".into()));
    }
    let fields = generators
        .iter()
        .map(|&g| geodesy.field(mesh, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(voronoi_from_fields(fields))
}

/// Polyline with arc-length parameterization.
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    pub points: Vec<Point>,
    cumulative: Vec<f64>,
    /// Set when steepest descent stalled and the edge-graph path was used.
    pub fallback: bool,
}

impl GeodesicPath {
    pub fn from_points(points: Vec<Point>, fallback: bool) -> Self {
        let mut cumulative = Vec::with_capacity(points.len());
        let mut s = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                s += dist(points[i - 1], *p);
            }
            cumulative.push(s);
        }
        Self {
            points,
            cumulative,
            fallback,
        }
    }

    pub fn length(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn start(&self) -> Point {
        self.points[0]
    }

    pub fn end(&self) -> Point {
        *self.points.last().expect("non-empty path")
    }

    /// Point at fraction `alpha` of the arc length.
    pub fn point_along(&self, alpha: f64) -> Result<Point> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Argument(format!("path fraction {alpha} outside [0, 1]")));
        }
        if alpha == 0.0 {
            return Ok(self.start());
        }
        if alpha == 1.0 {
            return Ok(self.end());
        }
        let total = self.length();
        if total == 0.0 {
            return Ok(self.start());
        }
        let s = alpha * total;
        let i = self.cumulative.partition_point(|&c| c < s).max(1);
        let (s0, s1) = (self.cumulative[i - 1], self.cumulative[i]);
        let w = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
        Ok(lerp(self.points[i - 1], self.points[i], w))
    }
}

pub fn point_along_path(path: &GeodesicPath, alpha: f64) -> Result<Point> {
    path.point_along(alpha)
}

fn push_subdivided(points: &mut Vec<Point>, to: Point, max_step: f64) {
    let from = *points.last().expect("path started");
    let l = dist(from, to);
    if l <= 0.0 {
        return;
    }
    let pieces = (l / max_step).ceil().max(1.0) as usize;
    for s in 1..=pieces {
        points.push(lerp(from, to, s as f64 / pieces as f64));
    }
}

fn field_gradient(mesh: &TriMesh, values: &[f64], t: usize) -> Point {
    let g = mesh.bary_gradients(t);
    let tri = mesh.triangles()[t];
    let mut out = [0.0, 0.0];
    for k in 0..3 {
        out[0] += values[tri[k]] * g[k][0];
        out[1] += values[tri[k]] * g[k][1];
    }
    out
}

/// Distance along `dir` from `p` (inside triangle `t`) to the triangle
/// boundary, with the local index of the exit edge.
fn exit_distance(mesh: &TriMesh, t: usize, p: Point, dir: Point) -> (f64, usize) {
    let l = mesh.barycentric(t, p);
    let g = mesh.bary_gradients(t);
    let mut best = (f64::INFINITY, 0);
    for k in 0..3 {
        let rate = dot(g[k], dir);
        if rate < -1e-14 {
            let s = (l[k].max(0.0)) / -rate;
            if s < best.0 {
                best = (s, k);
            }
        }
    }
    best
}

fn contains_bary(mesh: &TriMesh, t: usize, p: Point) -> bool {
    let l = mesh.barycentric(t, p);
    l.iter().all(|&x| x >= -1e-9)
}

fn candidate_triangles(mesh: &TriMesh, t: usize, p: Point) -> Vec<usize> {
    let l = mesh.barycentric(t, p);
    let tri = mesh.triangles()[t];
    let tol = 1e-9;
    if let Some(k) = (0..3).find(|&k| l[k] > 1.0 - tol) {
        return mesh.vertex_triangles(tri[k]).to_vec();
    }
    let mut out = vec![t];
    for k in 0..3 {
        if l[k] < tol {
            let e = mesh.triangle_edges(t)[k];
            for nt in mesh.edge_triangles(e).into_iter().flatten() {
                if nt != t {
                    out.push(nt);
                }
            }
        }
    }
    out
}

/// Steepest descent on `values` (distance to `b`) starting at `a`.
fn descend(mesh: &TriMesh, values: &[f64], a: Point, b: Point, max_step: f64) -> Option<Vec<Point>> {
    let mut t = mesh.locate(a)?.triangle;
    let mut p = a;
    let mut points = vec![a];
    let mut current = mesh.interpolate_at(values, &mesh.locate(a)?);
    let budget = 8 * mesh.n_triangles() + 64;
    for _ in 0..budget {
        if contains_bary(mesh, t, b) {
            push_subdivided(&mut points, b, max_step);
            return Some(points);
        }
        // pick a triangle around p offering a feasible descent direction
        let mut moved = false;
        let mut options: Vec<(f64, usize, Point, f64)> = Vec::new();
        for ct in candidate_triangles(mesh, t, p) {
            if contains_bary(mesh, ct, b) {
                t = ct;
                options.clear();
                moved = true;
                break;
            }
            let g = field_gradient(mesh, values, ct);
            let gn = norm(g);
            if gn < 1e-14 {
                continue;
            }
            let dir = [-g[0] / gn, -g[1] / gn];
            let (s, _) = exit_distance(mesh, ct, p, dir);
            if s > 1e-12 && s.is_finite() {
                options.push((gn, ct, dir, s));
            }
        }
        if moved {
            continue;
        }
        if let Some(&(_, ct, dir, s)) = options
            .iter()
            .max_by(|x, y| x.0.total_cmp(&y.0).then_with(|| y.1.cmp(&x.1)))
        {
            let q = [p[0] + s * dir[0], p[1] + s * dir[1]];
            let lq = mesh.barycentric(ct, q);
            let vq: f64 = (0..3)
                .map(|k| lq[k] * values[mesh.triangles()[ct][k]])
                .sum();
            if vq >= current - 1e-15 {
                return None;
            }
            push_subdivided(&mut points, q, max_step);
            p = q;
            t = ct;
            current = vq;
            // step into the neighbour across the exit edge when interior
            let (_, k) = exit_distance(mesh, ct, p, dir);
            let e = mesh.triangle_edges(ct)[k];
            if let [Some(t0), Some(t1)] = mesh.edge_triangles(e) {
                t = if t0 == ct { t1 } else { t0 };
            }
            continue;
        }
        // slide along an incident edge towards lower values
        let l = mesh.barycentric(t, p);
        let tri = mesh.triangles()[t];
        let mut best: Option<(f64, Point, usize)> = None;
        let near_vertex = (0..3).find(|&k| l[k] > 1.0 - 1e-9);
        match near_vertex {
            Some(k) => {
                let v = tri[k];
                for &w in mesh.vertex_neighbors(v) {
                    let rate = (values[w] - values[v]) / dist(mesh.vertex(v), mesh.vertex(w));
                    if rate < 0.0 && best.as_ref().is_none_or(|b| rate < b.0) {
                        let wt = mesh.vertex_triangles(w)[0];
                        best = Some((rate, mesh.vertex(w), wt));
                    }
                }
            }
            None => {
                for k in 0..3 {
                    if l[k] < 1e-9 {
                        let (u, w) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                        let target = if values[u] < values[w] { u } else { w };
                        if values[target] < current {
                            let rate = values[target] - current;
                            if best.as_ref().is_none_or(|b| rate < b.0) {
                                best = Some((rate, mesh.vertex(target), t));
                            }
                        }
                    }
                }
            }
        }
        let (_, q, qt) = best?;
        push_subdivided(&mut points, q, max_step);
        p = q;
        t = qt;
        current = mesh.interpolate(values, q)?;
    }
    None
}

/// Dijkstra along mesh edges from the corners of `a`'s triangle to the corners
/// of `b`'s triangle.
fn edge_graph_path(mesh: &TriMesh, a: Point, b: Point, max_step: f64) -> Result<Vec<Point>> {
    let la = mesh
        .locate(a)
        .ok_or_else(|| Error::Lookup("path start outside mesh".into()))?;
    let lb = mesh
        .locate(b)
        .ok_or_else(|| Error::Lookup("path end outside mesh".into()))?;
    let n = mesh.n_vertices();
    let mut d = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    for &v in &mesh.triangles()[la.triangle] {
        d[v] = dist(a, mesh.vertex(v));
        heap.push(HeapItem { d: d[v], v });
    }
    while let Some(HeapItem { d: dv, v }) = heap.pop() {
        if dv > d[v] {
            continue;
        }
        for &w in mesh.vertex_neighbors(v) {
            let nd = dv + dist(mesh.vertex(v), mesh.vertex(w));
            if nd < d[w] {
                d[w] = nd;
                prev[w] = v;
                heap.push(HeapItem { d: nd, v: w });
            }
        }
    }
    let end = mesh.triangles()[lb.triangle]
        .into_iter()
        .min_by(|&x, &y| {
            (d[x] + dist(mesh.vertex(x), b)).total_cmp(&(d[y] + dist(mesh.vertex(y), b)))
        })
        .expect("triangle has vertices");
    if !d[end].is_finite() {
        return Err(Error::Lookup("path endpoints are disconnected".into()));
    }
    let mut chain = vec![end];
    while prev[*chain.last().unwrap()] != usize::MAX {
        chain.push(prev[*chain.last().unwrap()]);
    }
    chain.reverse();
    let mut points = vec![a];
    for v in chain {
        push_subdivided(&mut points, mesh.vertex(v), max_step);
    }
    push_subdivided(&mut points, b, max_step);
    Ok(points)
}

/// Shortest path from `a` to `b` by steepest descent on the distance field
/// of `b`, falling back to an edge-graph path if the descent stalls.
pub fn shortest_path(mesh: &TriMesh, a: Point, b: Point) -> Result<GeodesicPath> {
    if !mesh.contains(a) || !mesh.contains(b) {
        return Err(Error::Lookup("path endpoint outside mesh".into()));
    }
    if dist(a, b) == 0.0 {
        return Ok(GeodesicPath::from_points(vec![a], false));
    }
    let max_step = 0.5 * mesh.mean_edge_length();
    if mesh.segment_inside(a, b) {
        let mut pts = vec![a];
        push_subdivided(&mut pts, b, max_step);
        return Ok(GeodesicPath::from_points(pts, false));
    }
    let field = distance_field(mesh, b)?;
    match descend(mesh, &field.values, a, b, max_step) {
        Some(pts) => Ok(GeodesicPath::from_points(pts, false)),
        None => Ok(GeodesicPath::from_points(
            edge_graph_path(mesh, a, b, max_step)?,
            true,
        )),
    }
}
