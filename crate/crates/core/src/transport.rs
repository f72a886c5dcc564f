//! Entropic 2-Wasserstein divergence between discrete measures, and an exact
//! small-instance solver used as a reference.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feec::FineComplex;
use crate::mesh::{dist, Point, TriMesh};

/// Density weights at or below this are dropped before a solve.
pub const SUPPORT_TRUNCATION: f64 = 1e-12;
/// L1 marginal violation accepted as converged.
pub const MARGINAL_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 200;
/// Largest support accepted by [`exact_w2sq_small`].
pub const EXACT_MAX_SUPPORT: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// Mesh vertex behind each support point, when the measure came from a mesh density.
    pub vertices: Option<Vec<usize>>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(Error::Argument(format!(
                "measure needs matching nonempty support and weights ({} vs {})",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::Validation(format!("negative measure weight {w}")));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::Validation(format!("measure weights sum to {s}, expected 1")));
        }
        Ok(Self { points, weights, vertices: None })
    }

    pub fn dirac(p: Point) -> Self {
        Self { points: vec![p], weights: vec![1.0], vertices: None }
    }

    /// Lumped-mass measure of a nodal density, restricted to nodes above
    /// [`SUPPORT_TRUNCATION`] and renormalized.
    pub fn from_density(mesh: &TriMesh, fc: &FineComplex, rho: &[f64]) -> Result<Self> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut vertices = Vec::new();
        for (v, (&r, &m)) in rho.iter().zip(&fc.lumped).enumerate() {
            let w = r * m;
            if w > SUPPORT_TRUNCATION {
                points.push(mesh.vertex(v));
                weights.push(w);
                vertices.push(v);
            }
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Validation("density has no mass above the truncation floor".into()));
        }
        weights.iter_mut().for_each(|w| *w /= s);
        Ok(Self { points, weights, vertices: Some(vertices) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Pairwise ground cost (squared length) between two supports.
pub trait GroundCost {
    fn matrix(&self, a: &DiscreteMeasure, b: &DiscreteMeasure) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredEuclidean;

impl GroundCost for SquaredEuclidean {
    fn matrix(&self, a: &DiscreteMeasure, b: &DiscreteMeasure) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| {
            let d = dist(a.points[i], b.points[j]);
            d * d
        })
    }
}

/// Squared geodesic distances from a precomputed vertex-to-vertex table.
/// Support points without a vertex index snap to the nearest vertex.
#[derive(Debug, Clone)]
pub struct GeodesicCost<'a> {
    pub mesh: &'a TriMesh,
    pub table: DMatrix<f64>,
}

impl<'a> GeodesicCost<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        let n = mesh.n_vertices();
        let mut table = DMatrix::zeros(n, n);
        for v in 0..n {
            let d = crate::geodesy::fast_march(mesh, &[(v, 0.0)]);
            for (w, x) in d.iter().enumerate() {
                table[(v, w)] = *x;
            }
        }
        // symmetrize the small FMM asymmetry
        let table = (&table + table.transpose()) * 0.5;
        Self { mesh, table }
    }

    fn ids(&self, m: &DiscreteMeasure) -> Vec<usize> {
        match &m.vertices {
            Some(v) => v.clone(),
            None => m.points.iter().map(|p| self.mesh.nearest_vertex(*p)).collect(),
        }
    }
}

impl GroundCost for GeodesicCost<'_> {
    fn matrix(&self, a: &DiscreteMeasure, b: &DiscreteMeasure) -> DMatrix<f64> {
        let (ia, ib) = (self.ids(a), self.ids(b));
        DMatrix::from_fn(ia.len(), ib.len(), |i, j| self.table[(ia[i], ib[j])].powi(2))
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    /// Debiased divergence `OT(μ,ν) − ½OT(μ,μ) − ½OT(ν,ν)`.
    pub value: f64,
    /// True when one of the three solves hit `max_iter` before the marginal tolerance.
    pub stale: bool,
    /// Largest final L1 marginal violation across the three solves.
    pub marginal_error: f64,
    pub iterations: usize,
    /// Derivative of the divergence with respect to each weight of μ.
    pub grad_mu: Vec<f64>,
    /// Derivative of the divergence with respect to each weight of ν.
    pub grad_nu: Vec<f64>,
}

/// `−ε·log Σ_j exp(h_j − c_j/ε)` over a row, computed stably.
fn softmin(eps: f64, c: impl Iterator<Item = f64>, h: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    let vals: Vec<f64> = c.zip(h).map(|(c, h)| h - c / eps).collect();
    for &v in &vals {
        m = m.max(v);
    }
    if m == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = vals.iter().map(|v| (v - m).exp()).sum();
    -eps * (m + s.ln())
}

struct Potentials {
    f: Vec<f64>,
    g: Vec<f64>,
    iterations: usize,
    err: f64,
    converged: bool,
}

fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|x| x.ln()).collect()
}

/// Row-marginal L1 error of the plan implied by `(f, g)`.
fn marginal_error(a: &[f64], b: &[f64], c: &DMatrix<f64>, f: &[f64], g: &[f64], eps: f64) -> f64 {
    (0..a.len())
        .map(|i| {
            let row: f64 = (0..b.len()).map(|j| b[j] * ((f[i] + g[j] - c[(i, j)]) / eps).exp()).sum();
            (a[i] * row - a[i]).abs()
        })
        .sum()
}

fn kernel_ok(c: &DMatrix<f64>, eps: f64) -> bool {
    (-c.max() / eps).exp() > 1e-200
}

fn solve_pair(a: &[f64], b: &[f64], c: &DMatrix<f64>, eps: f64, max_iter: usize) -> Potentials {
    if kernel_ok(c, eps) {
        if let Some(p) = solve_pair_kernel(a, b, &c.map(|x| (-x / eps).exp()), eps, max_iter) {
            return p;
        }
    }
    let (la, lb) = (log_weights(a), log_weights(b));
    let (n, m) = (a.len(), b.len());
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut err = f64::INFINITY;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let hg: Vec<f64> = (0..m).map(|j| lb[j] + g[j] / eps).collect();
        for i in 0..n {
            f[i] = softmin(eps, c.row(i).iter().copied(), &hg);
        }
        let hf: Vec<f64> = (0..n).map(|i| la[i] + f[i] / eps).collect();
        for j in 0..m {
            g[j] = softmin(eps, c.column(j).iter().copied(), &hf);
        }
        err = marginal_error(a, b, c, &f, &g, eps);
        if err <= MARGINAL_TOL {
            return Potentials { f, g, iterations: it, err, converged: true };
        }
    }
    Potentials { f, g, iterations: it, err, converged: false }
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Scaling-form iteration, valid when the Gibbs kernel has no underflow.
/// Potentials satisfy `f_i = −ε log Σ_j b_j exp((g_j − C_ij)/ε)` and the mirror identity.
fn solve_pair_kernel(a: &[f64], b: &[f64], k: &DMatrix<f64>, eps: f64, max_iter: usize) -> Option<Potentials> {
    let a = DVector::from_column_slice(a);
    let b = DVector::from_column_slice(b);
    let mut u = DVector::from_element(a.len(), 1.0);
    let mut v = DVector::from_element(b.len(), 1.0);
    let mut err = f64::INFINITY;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        u = (k * b.component_mul(&v)).map(|x| 1.0 / x);
        v = (k.tr_mul(&a.component_mul(&u))).map(|x| 1.0 / x);
        if !finite(&u) || !finite(&v) {
            return None;
        }
        // row marginal of P_ij = a_i u_i K_ij b_j v_j
        let row = (k * b.component_mul(&v)).component_mul(&u);
        err = a.iter().zip(row.iter()).map(|(ai, r)| (ai * r - ai).abs()).sum();
        if err <= MARGINAL_TOL {
            break;
        }
    }
    let f = u.iter().map(|x| eps * x.ln()).collect();
    let g = v.iter().map(|x| eps * x.ln()).collect();
    Some(Potentials { f, g, iterations: it, err, converged: err <= MARGINAL_TOL })
}

/// Symmetric problem `OT(a, a)` by averaged fixed-point updates.
fn solve_sym(a: &[f64], c: &DMatrix<f64>, kernel: Option<&DMatrix<f64>>, eps: f64, max_iter: usize) -> Potentials {
    let owned;
    let k = match kernel {
        Some(k) => Some(k),
        None if kernel_ok(c, eps) => {
            owned = c.map(|x| (-x / eps).exp());
            Some(&owned)
        }
        None => None,
    };
    if let Some(k) = k {
        if let Some(p) = solve_sym_kernel(a, k, eps, max_iter) {
            return p;
        }
    }
    let la = log_weights(a);
    let n = a.len();
    let mut f = vec![0.0; n];
    let mut err = f64::INFINITY;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let h: Vec<f64> = (0..n).map(|i| la[i] + f[i] / eps).collect();
        let t: Vec<f64> = (0..n).map(|i| softmin(eps, c.row(i).iter().copied(), &h)).collect();
        for i in 0..n {
            f[i] = 0.5 * (f[i] + t[i]);
        }
        err = marginal_error(a, a, c, &f, &f, eps);
        if err <= MARGINAL_TOL {
            return Potentials { g: f.clone(), f, iterations: it, err, converged: true };
        }
    }
    Potentials { g: f.clone(), f, iterations: it, err, converged: false }
}

fn solve_sym_kernel(a: &[f64], k: &DMatrix<f64>, eps: f64, max_iter: usize) -> Option<Potentials> {
    let a = DVector::from_column_slice(a);
    let mut u = DVector::from_element(a.len(), 1.0);
    let mut err = f64::INFINITY;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let t = k * a.component_mul(&u);
        u = u.zip_map(&t, |x, y| (x / y).sqrt());
        if !finite(&u) {
            return None;
        }
        let row = (k * a.component_mul(&u)).component_mul(&u);
        err = a.iter().zip(row.iter()).map(|(ai, r)| (ai * r - ai).abs()).sum();
        if err <= MARGINAL_TOL {
            break;
        }
    }
    let f: Vec<f64> = u.iter().map(|x| eps * x.ln()).collect();
    Some(Potentials { g: f.clone(), f, iterations: it, err, converged: err <= MARGINAL_TOL })
}

fn dual_value(a: &[f64], b: &[f64], p: &Potentials) -> f64 {
    a.iter().zip(&p.f).map(|(x, y)| x * y).sum::<f64>() + b.iter().zip(&p.g).map(|(x, y)| x * y).sum::<f64>()
}

/// Debiased entropic transport divergence between `mu` and `nu`.
pub fn sinkhorn_w2sq(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &dyn GroundCost,
    eps: f64,
    max_iter: usize,
) -> Result<SinkhornResult> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::Argument("empty measure".into()));
    }
    let costs = PairCosts {
        ab: &cost.matrix(mu, nu),
        aa: &cost.matrix(mu, mu),
        bb: &cost.matrix(nu, nu),
        bb_kernel: None,
    };
    sinkhorn_weights(&mu.weights, &nu.weights, &costs, eps, max_iter)
}

/// Cost matrices for the three problems of the debiased divergence. A
/// precomputed Gibbs kernel for the `bb` problem may be supplied when the
/// same support is reused across calls.
pub struct PairCosts<'a> {
    pub ab: &'a DMatrix<f64>,
    pub aa: &'a DMatrix<f64>,
    pub bb: &'a DMatrix<f64>,
    pub bb_kernel: Option<&'a DMatrix<f64>>,
}

/// Divergence on raw weight vectors. Zero weights are allowed.
pub fn sinkhorn_weights(a: &[f64], b: &[f64], costs: &PairCosts, eps: f64, max_iter: usize) -> Result<SinkhornResult> {
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("entropic regularization must be positive, got {eps}")));
    }
    if costs.ab.shape() != (a.len(), b.len()) || costs.aa.nrows() != a.len() || costs.bb.nrows() != b.len() {
        return Err(Error::Argument("cost matrix shape does not match the supports".into()));
    }
    let pab = solve_pair(a, b, costs.ab, eps, max_iter);
    let paa = solve_sym(a, costs.aa, None, eps, max_iter);
    let pbb = solve_sym(b, costs.bb, costs.bb_kernel, eps, max_iter);
    let value = dual_value(a, b, &pab) - 0.5 * dual_value(a, a, &paa) - 0.5 * dual_value(b, b, &pbb);
    let grad_mu = pab.f.iter().zip(&paa.f).map(|(x, y)| x - y).collect();
    let grad_nu = pab.g.iter().zip(&pbb.f).map(|(x, y)| x - y).collect();
    let marginal_error = pab.err.max(paa.err).max(pbb.err);
    let stale = !(pab.converged && paa.converged && pbb.converged);
    if stale {
        log::warn!("sinkhorn stopped at {max_iter} iterations with marginal error {marginal_error:.3e}");
    }
    Ok(SinkhornResult {
        value,
        stale,
        marginal_error,
        iterations: pab.iterations.max(paa.iterations).max(pbb.iterations),
        grad_mu,
        grad_nu,
    })
}

/// Exact squared 2-Wasserstein cost by successive shortest augmenting paths
/// on the transport network.
pub fn exact_w2sq_small(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cost: &dyn GroundCost) -> Result<f64> {
    let (n, m) = (mu.len(), nu.len());
    if n > EXACT_MAX_SUPPORT || m > EXACT_MAX_SUPPORT {
        return Err(Error::Argument(format!(
            "exact transport supports at most {EXACT_MAX_SUPPORT} points per side, got {n}×{m}"
        )));
    }
    let c = cost.matrix(mu, nu);
    let mut supply = mu.weights.clone();
    let mut demand = nu.weights.clone();
    let mut flow = DMatrix::<f64>::zeros(n, m);
    let total: f64 = supply.iter().sum::<f64>().min(demand.iter().sum());
    let mut sent = 0.0;
    // node ids: sources 0..n, sinks n..n+m
    while total - sent > 1e-15 {
        // Bellman-Ford from every source with residual supply
        let mut d = vec![f64::INFINITY; n + m];
        let mut pred = vec![usize::MAX; n + m];
        for i in 0..n {
            if supply[i] > 1e-15 {
                d[i] = 0.0;
            }
        }
        for _ in 0..(n + m) {
            let mut changed = false;
            for i in 0..n {
                for j in 0..m {
                    if d[i] + c[(i, j)] < d[n + j] - 1e-15 {
                        d[n + j] = d[i] + c[(i, j)];
                        pred[n + j] = i;
                        changed = true;
                    }
                    if flow[(i, j)] > 1e-15 && d[n + j] - c[(i, j)] < d[i] - 1e-15 {
                        d[i] = d[n + j] - c[(i, j)];
                        pred[i] = n + j;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let Some(t) = (0..m).filter(|&j| demand[j] > 1e-15 && d[n + j].is_finite()).min_by(|&x, &y| d[n + x].total_cmp(&d[n + y]))
        else {
            break;
        };
        // trace back to the originating source
        let mut path = vec![n + t];
        let mut cur = n + t;
        while pred[cur] != usize::MAX {
            cur = pred[cur];
            path.push(cur);
        }
        let s = cur;
        let mut amt = supply[s].min(demand[t]);
        for w in path.windows(2) {
            let (head, tail) = (w[0], w[1]);
            if head < n {
                // backward arc sink(tail) → source(head) cancels flow
                amt = amt.min(flow[(head, tail - n)]);
            }
        }
        for w in path.windows(2) {
            let (head, tail) = (w[0], w[1]);
            if head >= n {
                flow[(tail, head - n)] += amt;
            } else {
                flow[(head, tail - n)] -= amt;
            }
        }
        supply[s] -= amt;
        demand[t] -= amt;
        sent += amt;
    }
    Ok(flow.component_mul(&c).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_measure(n: usize, rng: &mut ChaCha8Rng) -> DiscreteMeasure {
        let pts: Vec<Point> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let w: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>()).collect();
        let s: f64 = w.iter().sum();
        DiscreteMeasure::new(pts, w.iter().map(|x| x / s).collect()).unwrap()
    }

    /// Minimum over basic feasible solutions: every 5-cell subset of the 3×3
    /// plan whose flow is uniquely determined by the marginals.
    fn brute_force_3x3(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        let c = SquaredEuclidean.matrix(mu, nu);
        let mut best = f64::INFINITY;
        let cells: Vec<(usize, usize)> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
        for mask in 0u32..512 {
            if mask.count_ones() != 5 {
                continue;
            }
            let sel: Vec<(usize, usize)> = cells.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, c)| *c).collect();
            let a = DMatrix::from_fn(6, 5, |r, k| {
                let (i, j) = sel[k];
                if (r < 3 && i == r) || (r >= 3 && j == r - 3) {
                    1.0
                } else {
                    0.0
                }
            });
            let rhs = nalgebra::DVector::from_iterator(6, mu.weights.iter().chain(&nu.weights).copied());
            let svd = a.clone().svd(true, true);
            if svd.singular_values.iter().filter(|s| **s > 1e-10).count() < 5 {
                continue;
            }
            let x = svd.solve(&rhs, 1e-12).unwrap();
            if (&a * &x - &rhs).norm() > 1e-10 || x.iter().any(|v| *v < -1e-12) {
                continue;
            }
            let v: f64 = sel.iter().zip(x.iter()).map(|((i, j), f)| c[(*i, *j)] * f).sum();
            best = best.min(v);
        }
        best
    }

    #[test]
    fn exact_matches_brute_force_3x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mu = random_measure(3, &mut rng);
            let nu = random_measure(3, &mut rng);
            let e = exact_w2sq_small(&mu, &nu, &SquaredEuclidean).unwrap();
            let b = brute_force_3x3(&mu, &nu);
            assert!((e - b).abs() < 1e-12, "{e} vs {b}");
        }
    }

    #[test]
    fn exact_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu = random_measure(7, &mut rng);
        assert!(exact_w2sq_small(&mu, &mu, &SquaredEuclidean).unwrap().abs() < 1e-14);
        let d = exact_w2sq_small(&DiscreteMeasure::dirac([0.0, 0.0]), &DiscreteMeasure::dirac([3.0, 4.0]), &SquaredEuclidean).unwrap();
        assert!((d - 25.0).abs() < 1e-12);
        let big = random_measure(13, &mut rng);
        assert!(matches!(exact_w2sq_small(&big, &mu, &SquaredEuclidean), Err(Error::Argument(_))));
    }

    #[test]
    fn identity_and_diracs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = random_measure(6, &mut rng);
        let r = sinkhorn_w2sq(&mu, &mu, &SquaredEuclidean, 1e-3, 2000).unwrap();
        assert!(r.value.abs() < 1e-9, "{}", r.value);
        let d = 0.7;
        let r = sinkhorn_w2sq(
            &DiscreteMeasure::dirac([0.0, 0.0]),
            &DiscreteMeasure::dirac([d, 0.0]),
            &SquaredEuclidean,
            1e-3 * d * d,
            200,
        )
        .unwrap();
        assert!((r.value - d * d).abs() < 0.01 * d * d);
        assert!(!r.stale);
    }

    #[test]
    fn small_eps_approaches_exact_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mu = random_measure(6, &mut rng);
        let nu = random_measure(6, &mut rng);
        let exact = exact_w2sq_small(&mu, &nu, &SquaredEuclidean).unwrap();
        let errs: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&e| (sinkhorn_w2sq(&mu, &nu, &SquaredEuclidean, e, 20000).unwrap().value - exact).abs())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 0.02 * exact);
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mu = random_measure(5, &mut rng);
        let nu = random_measure(4, &mut rng);
        let eps = 0.05;
        let r = sinkhorn_w2sq(&mu, &nu, &SquaredEuclidean, eps, 5000).unwrap();
        // perturb along a zero-sum direction so the measure stays normalized
        let dir = [0.3, -0.1, 0.2, -0.4];
        let h = 1e-6;
        let shifted = |s: f64| {
            let w: Vec<f64> = nu.weights.iter().zip(dir).map(|(w, d)| w + s * d).collect();
            let m = DiscreteMeasure { weights: w, ..nu.clone() };
            sinkhorn_w2sq(&mu, &m, &SquaredEuclidean, eps, 5000).unwrap().value
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        let ad: f64 = r.grad_nu.iter().zip(dir).map(|(g, d)| g * d).sum();
        assert!((fd - ad).abs() < 1e-6, "{fd} vs {ad}");
    }

    #[test]
    fn stale_flag_on_iteration_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mu = random_measure(8, &mut rng);
        let nu = random_measure(8, &mut rng);
        let r = sinkhorn_w2sq(&mu, &nu, &SquaredEuclidean, 1e-4, 2).unwrap();
        assert!(r.stale && r.marginal_error > MARGINAL_TOL);
    }

    #[test]
    fn invalid_inputs() {
        assert!(DiscreteMeasure::new(vec![[0.0, 0.0]], vec![0.5]).is_err());
        assert!(DiscreteMeasure::new(vec![[0.0, 0.0], [1.0, 0.0]], vec![1.5, -0.5]).is_err());
        let m = DiscreteMeasure::dirac([0.0, 0.0]);
        assert!(sinkhorn_w2sq(&m, &m, &SquaredEuclidean, 0.0, 10).is_err());
    }
}
