//! Compressed-row sparse matrices and a banded direct solver.
//!
//! Assembly goes through [`TripletBuilder`]; duplicates are summed in
//! insertion order so results are bit-reproducible.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.entries.push((i, j, v));
    }

    pub fn build(mut self) -> CsrMatrix {
        // stable: equal (i, j) keep insertion order for the summation
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.nrows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "dimension mismatch in mat-vec");
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "dimension mismatch in mat-vec");
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for (i, j, v) in self.triplets() {
            b.push(j, i, v);
        }
        b.build()
    }

    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows, "dimension mismatch in mat-mat");
        let mut b = TripletBuilder::new(self.nrows, other.ncols);
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut cols = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(i) {
                for (j, v) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        cols.push(j);
                    }
                    acc[j] += a * v;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                b.push(i, j, acc[j]);
            }
        }
        b.build()
    }

    /// `self + s·other` on the union pattern.
    pub fn add_scaled(&self, s: f64, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut b = TripletBuilder::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        for (i, j, v) in self.triplets() {
            b.push(i, j, v);
        }
        for (i, j, v) in other.triplets() {
            b.push(i, j, s * v);
        }
        b.build()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// Replaces row `i` by the unit row `e_i`.
    pub fn set_identity_row(&mut self, i: usize) {
        for k in self.indptr[i]..self.indptr[i + 1] {
            self.values[k] = if self.indices[k] == i { 1.0 } else { 0.0 };
        }
        if self.get(i, i) != 1.0 {
            let mut b = TripletBuilder::new(self.nrows, self.ncols);
            for (r, c, v) in self.triplets() {
                b.push(r, c, v);
            }
            b.push(i, i, 1.0);
            *self = b.build();
        }
    }

    /// Largest |A_ij - A_ji|.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        self.max_abs_diff(&t)
    }

    pub fn max_abs_diff(&self, other: &CsrMatrix) -> f64 {
        self.add_scaled(-1.0, other)
            .values
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Coordinate text dump: `row col value` per line, 0-based.
    pub fn to_coo_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{i} {j} {v:.17e}");
        }
        s
    }

    pub fn write_coo(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_coo_text())?;
        Ok(())
    }

    fn symmetric_adjacency(&self) -> Vec<Vec<usize>> {
        let n = self.nrows;
        let mut adj = vec![Vec::new(); n];
        for (i, j, _) in self.triplets() {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

/// Reverse Cuthill–McKee ordering of the symmetrized pattern.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let adj = a.symmetric_adjacency();
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let bfs = |start: usize, visited: &mut Vec<bool>, out: &mut Vec<usize>| {
        let mut q = VecDeque::new();
        q.push_back(start);
        visited[start] = true;
        while let Some(v) = q.pop_front() {
            out.push(v);
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (adj[w].len(), w));
            for w in nb {
                visited[w] = true;
                q.push_back(w);
            }
        }
    };
    while order.len() < n {
        // pseudo-peripheral start: min degree unvisited, then the last node of a BFS from it
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (adj[v].len(), v))
            .unwrap();
        let mut probe_vis = visited.clone();
        let mut probe = Vec::new();
        bfs(seed, &mut probe_vis, &mut probe);
        let start = *probe.last().unwrap();
        bfs(start, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// Banded LU with partial pivoting (row interchanges within the band).
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    band: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // row i stores columns i-kl ..= i+ku+kl
        i * self.width + (j + self.kl - i)
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::Argument("LU of a non-square matrix".into()));
        }
        let (mut kl, mut ku) = (0usize, 0usize);
        for (i, j, _) in a.triplets() {
            if j < i {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
        let width = 2 * kl + ku + 1;
        let mut lu = BandLu {
            n,
            kl,
            ku,
            width,
            band: vec![0.0; n * width],
            piv: vec![0; n],
        };
        for (i, j, v) in a.triplets() {
            let k = lu.idx(i, j);
            lu.band[k] += v;
        }
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let reach = kl + ku;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.band[lu.idx(k, k)].abs();
            for r in k + 1..=last {
                let v = lu.band[lu.idx(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= 1e-300_f64.max(scale * 1e-15) {
                return Err(Error::Singular(format!("zero pivot at column {k}")));
            }
            lu.piv[k] = p;
            let cmax = (k + reach).min(n - 1);
            if p != k {
                for c in k..=cmax {
                    let (x, y) = (lu.idx(k, c), lu.idx(p, c));
                    lu.band.swap(x, y);
                }
            }
            let d = lu.band[lu.idx(k, k)];
            for r in k + 1..=last {
                let ir = lu.idx(r, k);
                let l = lu.band[ir] / d;
                if l == 0.0 {
                    continue;
                }
                lu.band[ir] = l;
                for c in k + 1..=cmax {
                    let u = lu.band[lu.idx(k, c)];
                    if u != 0.0 {
                        let t = lu.idx(r, c);
                        lu.band[t] -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + self.kl).min(n.saturating_sub(1)) {
                    b[r] -= self.band[self.idx(r, k)] * bk;
                }
            }
        }
        let reach = self.kl + self.ku;
        for k in (0..n).rev() {
            let mut s = b[k];
            for c in k + 1..=(k + reach).min(n - 1) {
                s -= self.band[self.idx(k, c)] * b[c];
            }
            b[k] = s / self.band[self.idx(k, k)];
        }
    }

    pub fn bandwidth(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }
}

/// Direct sparse solver: RCM reordering, banded LU, iterative refinement.
#[derive(Debug, Clone)]
pub struct SparseLu {
    perm: Vec<usize>,
    permuted: CsrMatrix,
    lu: BandLu,
}

impl SparseLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut b = TripletBuilder::with_capacity(a.nrows(), a.ncols(), a.nnz());
        for (i, j, v) in a.triplets() {
            b.push(inv[i], inv[j], v);
        }
        let permuted = b.build();
        let lu = BandLu::factor(&permuted)?;
        Ok(Self { perm, permuted, lu })
    }

    /// Solves `A x = b`, refining until the relative residual is below `1e-13`
    /// or three corrections have been applied.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let pb: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        let mut x = pb.clone();
        self.lu.solve_in_place(&mut x);
        let bnorm = pb.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for _ in 0..3 {
            let ax = self.permuted.mul_vec(&x);
            let mut r: Vec<f64> = pb.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let rn = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if rn <= 1e-13 * bnorm || rn == 0.0 {
                break;
            }
            self.lu.solve_in_place(&mut r);
            x.iter_mut().zip(&r).for_each(|(x, d)| *x += d);
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 4.0 + rng.random::<f64>());
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                b.push(i, j, rng.random::<f64>() - 0.5);
            }
        }
        b.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut b = TripletBuilder::new(2, 2);
        b.push(1, 0, 1.0);
        b.push(0, 1, 2.0);
        b.push(1, 0, 3.0);
        let m = b.build();
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn lu_matches_dense_solve() {
        for seed in 0..4 {
            let a = random_sparse(60, seed);
            let x_true: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
            let b = a.mul_vec(&x_true);
            let x = SparseLu::factor(&a).unwrap().solve(&b);
            let err = x.iter().zip(&x_true).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-12, "seed {seed}: {err}");
        }
    }

    #[test]
    fn pivoting_needed() {
        // zero leading diagonal forces a row interchange
        let mut b = TripletBuilder::new(3, 3);
        for (i, j, v) in [(0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0), (2, 2, 2.0), (1, 2, 1.0)] {
            b.push(i, j, v);
        }
        let a = b.build();
        let x = SparseLu::factor(&a).unwrap().solve(&[1.0, 2.0, 4.0]);
        let r = a.mul_vec(&x);
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] - 2.0).abs() < 1e-14 && (r[2] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn singular_detected() {
        let mut b = TripletBuilder::new(2, 2);
        b.push(0, 0, 1.0);
        b.push(1, 0, 1.0);
        assert!(matches!(SparseLu::factor(&b.build()), Err(Error::Singular(_))));
    }

    #[test]
    fn rcm_is_permutation() {
        let a = random_sparse(40, 9);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort_unstable();
        assert_eq!(p, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn matmul_and_transpose() {
        let a = random_sparse(12, 3);
        let b = random_sparse(12, 4);
        let c = a.transpose().matmul(&b);
        let d = a.to_dense().transpose() * b.to_dense();
        assert!((c.to_dense() - d).abs().max() < 1e-14);
    }

    #[test]
    fn coo_dump_lines() {
        let a = CsrMatrix::identity(3);
        let s = a.to_coo_text();
        assert_eq!(s.lines().count(), 4);
        assert!(s.lines().nth(2).unwrap().starts_with("1 1 1.0"));
    }
}
