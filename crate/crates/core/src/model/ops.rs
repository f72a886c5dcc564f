//! Differentiable building blocks that sit outside the generic tape ops.

use nalgebra::{DMatrix, DVector};

use crate::autodiff::{CustomOp, Mat};
use crate::feec::FineComplex;
use crate::mesh::TriMesh;
use crate::quadrature::QuadratureRule;
use crate::rom::{coarse_basis_on_triangle, coarse_edges, sparse_times_wt};
use crate::sparse::CsrMatrix;
use crate::transport::{sinkhorn_weights, PairCosts, SinkhornResult};

/// Places softmax weights `P` (interior × trainable) into `W`, with boundary
/// vertices pinned to `boundary_row`.
pub struct ScatterW {
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    pub n0c: usize,
    pub n0f: usize,
    pub boundary_row: usize,
}

impl ScatterW {
    fn row_of(&self, p: usize) -> usize {
        if p >= self.boundary_row {
            p + 1
        } else {
            p
        }
    }

    pub fn forward(&self, p: &Mat) -> Mat {
        let mut w = DMatrix::zeros(self.n0c, self.n0f);
        for (i, &v) in self.interior.iter().enumerate() {
            for k in 0..p.ncols() {
                w[(self.row_of(k), v)] = p[(i, k)];
            }
        }
        for &v in &self.boundary {
            w[(self.boundary_row, v)] = 1.0;
        }
        w
    }
}

impl CustomOp for ScatterW {
    fn vjp(&self, inputs: &[&Mat], _out: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let k = inputs[0].ncols();
        let d = DMatrix::from_fn(self.interior.len(), k, |i, p| grad[(self.row_of(p), self.interior[i])]);
        vec![Some(d)]
    }
}

/// `W ↦ W M0f Wᵀ`.
pub struct CoarseMass0<'a> {
    pub m0f: &'a CsrMatrix,
}

impl CoarseMass0<'_> {
    pub fn forward(&self, w: &Mat) -> Mat {
        w * sparse_times_wt(self.m0f, w)
    }
}

impl CustomOp for CoarseMass0<'_> {
    fn vjp(&self, inputs: &[&Mat], _out: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let w = inputs[0];
        let mwt = sparse_times_wt(self.m0f, w);
        vec![Some((grad + grad.transpose()) * mwt.transpose())]
    }
}

/// `W ↦ M1c`, the coarse 1-form mass matrix by quadrature of
/// `ψ_j∇ψ_i − ψ_i∇ψ_j` on every fine triangle.
pub struct CoarseMass1<'a> {
    pub mesh: &'a TriMesh,
    pub rule: QuadratureRule,
}

impl CoarseMass1<'_> {
    pub fn forward(&self, w: &Mat) -> Mat {
        let edges = coarse_edges(w.nrows());
        let ne = edges.len();
        let mut m1 = DMatrix::zeros(ne, ne);
        let mut psi1 = vec![[0.0; 2]; ne];
        for t in 0..self.mesh.n_triangles() {
            let area = self.mesh.area(t);
            let (vals, grads) = coarse_basis_on_triangle(self.mesh, w, t, &self.rule.points);
            for (q, wq) in self.rule.weights.iter().enumerate() {
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
                        m1[(a, b)] += s * (psi1[a][0] * psi1[b][0] + psi1[a][1] * psi1[b][1]);
                    }
                }
            }
        }
        for a in 0..ne {
            for b in 0..a {
                m1[(a, b)] = m1[(b, a)];
            }
        }
        m1
    }
}

impl CustomOp for CoarseMass1<'_> {
    fn vjp(&self, inputs: &[&Mat], _out: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let w = inputs[0];
        let nc = w.nrows();
        let edges = coarse_edges(nc);
        let ne = edges.len();
        let gs = grad + grad.transpose();
        let mut dw = DMatrix::zeros(nc, w.ncols());
        let mut psi1 = vec![[0.0; 2]; ne];
        let mut y = vec![[0.0; 2]; ne];
        for t in 0..self.mesh.n_triangles() {
            let tri = self.mesh.triangles()[t];
            let bg = self.mesh.bary_gradients(t);
            let area = self.mesh.area(t);
            let (vals, grads) = coarse_basis_on_triangle(self.mesh, w, t, &self.rule.points);
            // adjoints of the basis gradients accumulate over quadrature points
            let mut dgrad = vec![[0.0; 2]; nc];
            for (q, wq) in self.rule.weights.iter().enumerate() {
                let psi = &vals[q];
                for (e, &(i, j)) in edges.iter().enumerate() {
                    psi1[e] = [
                        psi[j] * grads[i][0] - psi[i] * grads[j][0],
                        psi[j] * grads[i][1] - psi[i] * grads[j][1],
                    ];
                }
                let s = wq * area;
                for a in 0..ne {
                    let mut v = [0.0; 2];
                    for b in 0..ne {
                        v[0] += gs[(a, b)] * psi1[b][0];
                        v[1] += gs[(a, b)] * psi1[b][1];
                    }
                    y[a] = [s * v[0], s * v[1]];
                }
                let mut dpsi = vec![0.0; nc];
                for (a, &(i, j)) in edges.iter().enumerate() {
                    let ya = y[a];
                    dpsi[j] += grads[i][0] * ya[0] + grads[i][1] * ya[1];
                    dpsi[i] -= grads[j][0] * ya[0] + grads[j][1] * ya[1];
                    for d in 0..2 {
                        dgrad[i][d] += psi[j] * ya[d];
                        dgrad[j][d] -= psi[i] * ya[d];
                    }
                }
                let l = self.rule.points[q];
                for c in 0..nc {
                    for k in 0..3 {
                        dw[(c, tri[k])] += dpsi[c] * l[k];
                    }
                }
            }
            for c in 0..nc {
                for k in 0..3 {
                    dw[(c, tri[k])] += dgrad[c][0] * bg[k][0] + dgrad[c][1] * bg[k][1];
                }
            }
        }
        vec![Some(dw)]
    }
}

/// Output is the converged root `û*`; the single input is the residual
/// graph `H(û*, θ)` built with `û*` held constant. The adjoint solves
/// `Jᵀλ = ū` and sends `−λ` into the residual.
pub struct ImplicitSolve {
    pub jacobian: DMatrix<f64>,
}

impl CustomOp for ImplicitSolve {
    fn vjp(&self, _inputs: &[&Mat], _out: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let jt = self.jacobian.transpose();
        let rhs = DVector::from_column_slice(grad.as_slice());
        let lam = jt
            .clone()
            .lu()
            .solve(&rhs)
            .or_else(|| jt.svd(true, true).solve(&rhs, 1e-14).ok())
            .unwrap_or_else(|| DVector::zeros(rhs.len()));
        vec![Some(-DMatrix::from_column_slice(grad.nrows(), grad.ncols(), lam.as_slice()))]
    }
}

/// `c·(x − t)ᵀ M (x − t)` for a column `x`.
pub struct MassMisfit<'a> {
    pub m: &'a CsrMatrix,
    pub target: Vec<f64>,
    pub scale: f64,
}

impl MassMisfit<'_> {
    pub fn forward(&self, x: &Mat) -> Mat {
        let r: Vec<f64> = x.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let mr = self.m.mul_vec(&r);
        Mat::from_element(1, 1, self.scale * r.iter().zip(&mr).map(|(a, b)| a * b).sum::<f64>())
    }
}

impl CustomOp for MassMisfit<'_> {
    fn vjp(&self, inputs: &[&Mat], _out: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let r: Vec<f64> = inputs[0].iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let mr = self.m.mul_vec(&r);
        let s = 2.0 * self.scale * grad[(0, 0)];
        vec![Some(Mat::from_iterator(mr.len(), 1, mr.into_iter().map(|v| s * v)))]
    }
}

/// `max(0, x)` on the unmasked entries of a source row, zero elsewhere.
/// When every unmasked entry is inactive the gradient passes straight
/// through so a collapsed source head can recover.
pub struct SourceActivation {
    pub mask: Vec<bool>,
}

impl SourceActivation {
    pub fn forward(&self, x: &Mat) -> Mat {
        Mat::from_fn(x.nrows(), x.ncols(), |i, j| if self.mask[j] { x[(i, j)].max(0.0) } else { 0.0 })
    }

    fn collapsed(&self, x: &Mat, row: usize) -> bool {
        (0..x.ncols()).all(|j| !self.mask[j] || x[(row, j)] <= 0.0)
    }
}

impl CustomOp for SourceActivation {
    fn vjp(&self, inputs: &[&Mat], _out: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let x = inputs[0];
        let g = Mat::from_fn(x.nrows(), x.ncols(), |i, j| {
            let pass = self.mask[j] && (x[(i, j)] > 0.0 || self.collapsed(x, i));
            if pass {
                grad[(i, j)]
            } else {
                0.0
            }
        });
        vec![Some(g)]
    }
}

/// Shared transport data for one mesh: vertex-pair costs and, when it does
/// not underflow, the Gibbs kernel.
pub struct TransportCache {
    pub cost: DMatrix<f64>,
    pub kernel: Option<DMatrix<f64>>,
    pub eps: f64,
    pub max_iter: usize,
}

impl TransportCache {
    pub fn new(cost: DMatrix<f64>, eps: f64, max_iter: usize) -> Self {
        let kernel = ((-cost.max() / eps).exp() > 1e-200).then(|| cost.map(|c| (-c / eps).exp()));
        Self { cost, kernel, eps, max_iter }
    }
}

/// Target measure on a subset of mesh vertices.
pub struct TargetMeasure {
    pub vertices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl TargetMeasure {
    /// Lumped-mass weights of a nodal density above the truncation floor.
    pub fn from_density(fc: &FineComplex, rho: &[f64]) -> Self {
        let mut vertices = Vec::new();
        let mut weights = Vec::new();
        for (v, (r, m)) in rho.iter().zip(&fc.lumped).enumerate() {
            if r * m > crate::transport::SUPPORT_TRUNCATION {
                vertices.push(v);
                weights.push(r * m);
            }
        }
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        Self { vertices, weights }
    }
}

/// Normalizes a nonnegative nodal field to a lumped-mass measure and
/// returns its debiased transport divergence to a fixed target.
pub struct DensityDivergence<'a> {
    pub lumped: &'a [f64],
    pub target: &'a TargetMeasure,
    pub cache: &'a TransportCache,
}

pub struct DivergenceEval {
    pub result: Option<SinkhornResult>,
    pub mass: f64,
    pub value: f64,
}

impl DensityDivergence<'_> {
    fn weights(&self, f: &Mat) -> (Vec<f64>, f64) {
        let w: Vec<f64> = f.iter().zip(self.lumped).map(|(f, m)| f.max(0.0) * m).collect();
        let s = w.iter().sum();
        (w, s)
    }

    pub fn eval(&self, f: &Mat) -> DivergenceEval {
        let (mut b, mass) = self.weights(f);
        let area: f64 = self.lumped.iter().sum();
        if mass < crate::forward::DENSITY_FLOOR * area {
            // degenerate prediction: uniform density, no gradient
            b = self.lumped.iter().map(|m| m / area).collect();
        } else {
            b.iter_mut().for_each(|x| *x /= mass);
        }
        let t = &self.target.vertices;
        let c = &self.cache.cost;
        let ab = DMatrix::from_fn(t.len(), c.ncols(), |i, j| c[(t[i], j)]);
        let aa = DMatrix::from_fn(t.len(), t.len(), |i, j| c[(t[i], t[j])]);
        let costs = PairCosts { ab: &ab, aa: &aa, bb: c, bb_kernel: self.cache.kernel.as_ref() };
        let r = sinkhorn_weights(&self.target.weights, &b, &costs, self.cache.eps, self.cache.max_iter)
            .expect("shapes are consistent by construction");
        let value = r.value;
        let degenerate = mass < crate::forward::DENSITY_FLOOR * area;
        DivergenceEval { result: (!degenerate).then_some(r), mass, value }
    }
}

/// Debiased Sinkhorn divergence between two nodal densities.
pub fn density_divergence(fc: &FineComplex, cache: &TransportCache, rho_true: &[f64], rho: &[f64]) -> f64 {
    let target = TargetMeasure::from_density(fc, rho_true);
    let div = DensityDivergence { lumped: &fc.lumped, target: &target, cache };
    div.eval(&Mat::from_column_slice(rho.len(), 1, rho)).value
}

/// Tape node wrapping a [`DensityDivergence`] evaluation.
pub struct DivergenceNode<'a> {
    pub lumped: &'a [f64],
    pub eval: DivergenceEval,
}

impl CustomOp for DivergenceNode<'_> {
    fn vjp(&self, inputs: &[&Mat], _out: &Mat, grad: &Mat) -> Vec<Option<Mat>> {
        let Some(r) = &self.eval.result else {
            return vec![None];
        };
        let f = inputs[0];
        let z = self.eval.mass;
        // b_i = m_i f_i / Z  ⇒  ∂S/∂f_k = m_k (g_k − Σ_i g_i b_i) / Z
        let b: Vec<f64> = f.iter().zip(self.lumped).map(|(f, m)| f.max(0.0) * m / z).collect();
        let mean: f64 = r.grad_nu.iter().zip(&b).map(|(g, b)| g * b).sum();
        let s = grad[(0, 0)];
        let d = Mat::from_fn(f.nrows(), 1, |k, _| {
            if f[k] < 0.0 {
                0.0
            } else {
                s * self.lumped[k] * (r.grad_nu[k] - mean) / z
            }
        });
        vec![Some(d)]
    }
}
