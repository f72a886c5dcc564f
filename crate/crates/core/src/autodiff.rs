//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over indices
//! is a valid topological order. Operations outside the built-in set plug in
//! through [`CustomOp`].

use nalgebra::DMatrix;

pub type Mat = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub usize);

/// Vector-Jacobian product for a user-defined node.
pub trait CustomOp {
    fn vjp(&self, inputs: &[&Mat], output: &Mat, grad: &Mat) -> Vec<Option<Mat>>;
}

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Adds a 1×c row to every row.
    AddRow(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    Reshape(Var),
    /// Hadamard product with a constant.
    Mask(Var, Mat),
    /// Constant matrix on the left: `C·x`.
    ConstLeft(Mat, Var),
    /// 1×1 scalar times a matrix.
    ScalarMul(Var, Var),
    Custom(Vec<Var>, Box<dyn CustomOp + 'a>),
}

#[derive(Default)]
pub struct Tape<'a> {
    vals: Vec<Mat>,
    ops: Vec<Op<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    fn push(&mut self, v: Mat, op: Op<'a>) -> Var {
        self.vals.push(v);
        self.ops.push(op);
        Var(self.vals.len() - 1)
    }

    pub fn leaf(&mut self, v: Mat) -> Var {
        self.push(v, Op::Leaf)
    }

    pub fn scalar(&mut self, s: f64) -> Var {
        self.leaf(Mat::from_element(1, 1, s))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.vals[v.0]
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.vals[v.0][(0, 0)]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).component_mul(self.value(b));
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1);
        let mut v = self.value(a).clone();
        for mut x in v.row_iter_mut() {
            x += r;
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.row_iter_mut() {
            let m = row.max();
            row.apply(|x| *x = (*x - m).exp());
            let s = row.sum();
            row /= s;
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_element(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.value(parts[0]).nrows();
        let c: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut v = Mat::zeros(r, c);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            v.view_mut((0, off), m.shape()).copy_from(m);
            off += m.ncols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.value(parts[0]).ncols();
        let r: usize = parts.iter().map(|&p| self.value(p).nrows()).sum();
        let mut v = Mat::zeros(r, c);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            v.view_mut((off, 0), m.shape()).copy_from(m);
            off += m.nrows();
        }
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).columns(start, len).into_owned();
        self.push(v, Op::SliceCols(a, start, len))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).rows(start, len).into_owned();
        self.push(v, Op::SliceRows(a, start, len))
    }

    /// Column-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = Mat::from_column_slice(rows, cols, self.value(a).as_slice());
        self.push(v, Op::Reshape(a))
    }

    pub fn mask(&mut self, a: Var, m: Mat) -> Var {
        let v = self.value(a).component_mul(&m);
        self.push(v, Op::Mask(a, m))
    }

    pub fn const_left(&mut self, c: Mat, a: Var) -> Var {
        let v = &c * self.value(a);
        self.push(v, Op::ConstLeft(c, a))
    }

    /// `x W + b` for a row-batch `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn scalar_mul(&mut self, s: Var, a: Var) -> Var {
        assert_eq!(self.value(s).shape(), (1, 1));
        let v = self.value(a) * self.scalar_value(s);
        self.push(v, Op::ScalarMul(s, a))
    }

    pub fn custom(&mut self, inputs: &[Var], value: Mat, op: Box<dyn CustomOp + 'a>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), op))
    }

    /// Gradients of the scalar `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).shape(), (1, 1), "backward needs a scalar output");
        let mut g: Vec<Option<Mat>> = (0..self.vals.len()).map(|_| None).collect();
        g[out.0] = Some(Mat::from_element(1, 1, 1.0));
        let acc = |g: &mut Vec<Option<Mat>>, v: Var, d: Mat| match &mut g[v.0] {
            Some(x) => *x += d,
            slot => *slot = Some(d),
        };
        for i in (0..=out.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            let y = &self.vals[i];
            match &self.ops[i] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = &gi * self.value(*b).transpose();
                    let db = self.value(*a).transpose() * &gi;
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, gi.clone());
                    acc(&mut g, *b, gi.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut g, *a, gi.clone());
                    acc(&mut g, *b, -gi.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut g, *a, gi.component_mul(self.value(*b)));
                    acc(&mut g, *b, gi.component_mul(self.value(*a)));
                }
                Op::Scale(a, s) => acc(&mut g, *a, &gi * *s),
                Op::AddRow(a, r) => {
                    let dr = Mat::from_fn(1, gi.ncols(), |_, c| gi.column(c).sum());
                    acc(&mut g, *a, gi.clone());
                    acc(&mut g, *r, dr);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(&mut g, *a, gi.zip_map(x, |d, x| if x > 0.0 { d } else { 0.0 }));
                }
                Op::Tanh(a) => acc(&mut g, *a, gi.zip_map(y, |d, t| d * (1.0 - t * t))),
                Op::Exp(a) => acc(&mut g, *a, gi.component_mul(y)),
                Op::SoftmaxRows(a) => {
                    let mut d = gi.component_mul(y);
                    for r in 0..d.nrows() {
                        let s: f64 = d.row(r).sum();
                        for c in 0..d.ncols() {
                            d[(r, c)] -= y[(r, c)] * s;
                        }
                    }
                    acc(&mut g, *a, d);
                }
                Op::Transpose(a) => acc(&mut g, *a, gi.transpose()),
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut g, *a, Mat::from_element(r, c, gi[(0, 0)]));
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).ncols();
                        acc(&mut g, p, gi.columns(off, c).into_owned());
                        off += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let r = self.value(p).nrows();
                        acc(&mut g, p, gi.rows(off, r).into_owned());
                        off += r;
                    }
                }
                Op::SliceCols(a, s, l) => {
                    let mut d = Mat::zeros(self.value(*a).nrows(), self.value(*a).ncols());
                    d.columns_mut(*s, *l).copy_from(&gi);
                    acc(&mut g, *a, d);
                }
                Op::SliceRows(a, s, l) => {
                    let mut d = Mat::zeros(self.value(*a).nrows(), self.value(*a).ncols());
                    d.rows_mut(*s, *l).copy_from(&gi);
                    acc(&mut g, *a, d);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut g, *a, Mat::from_column_slice(r, c, gi.as_slice()));
                }
                Op::Mask(a, m) => acc(&mut g, *a, gi.component_mul(m)),
                Op::ConstLeft(c, a) => acc(&mut g, *a, c.transpose() * &gi),
                Op::ScalarMul(s, a) => {
                    let ds = gi.component_mul(self.value(*a)).sum();
                    acc(&mut g, *s, Mat::from_element(1, 1, ds));
                    acc(&mut g, *a, &gi * self.scalar_value(*s));
                }
                Op::Custom(inputs, op) => {
                    let ins: Vec<&Mat> = inputs.iter().map(|v| self.value(*v)).collect();
                    for (v, d) in inputs.iter().zip(op.vjp(&ins, y, &gi)) {
                        if let Some(d) = d {
                            acc(&mut g, *v, d);
                        }
                    }
                }
            }
            g[i] = Some(gi);
        }
        Gradients(g)
    }
}

pub struct Gradients(Vec<Option<Mat>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0[v.0].as_ref()
    }

    /// Gradient shaped like the node, zero when the node did not influence the output.
    pub fn get_or_zero(&self, tape: &Tape, v: Var) -> Mat {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(tape.value(v).nrows(), tape.value(v).ncols()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random::<f64>() - 0.5)
    }

    /// Central-difference check of every leaf for a scalar-valued builder.
    fn check(build: impl Fn(&mut Tape, &[Var]) -> Var, leaves: Vec<Mat>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out);
        let h = 1e-6;
        for (k, leaf) in leaves.iter().enumerate() {
            let g = grads.get_or_zero(&tape, vars[k]);
            for idx in 0..leaf.len() {
                let eval = |delta: f64| {
                    let mut ls = leaves.clone();
                    ls[k][idx] += delta;
                    let mut t = Tape::new();
                    let vs: Vec<Var> = ls.into_iter().map(|m| t.leaf(m)).collect();
                    let o = build(&mut t, &vs);
                    t.scalar_value(o)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!((fd - g[idx]).abs() <= 1e-6 * (1.0 + fd.abs()), "leaf {k}[{idx}]: fd {fd} vs ad {}", g[idx]);
            }
        }
    }

    #[test]
    fn mlp_attention_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let leaves = vec![
            rand_mat(4, 3, &mut rng),
            rand_mat(3, 5, &mut rng),
            rand_mat(1, 5, &mut rng),
            rand_mat(5, 1, &mut rng),
        ];
        check(
            |t, v| {
                let h = t.affine(v[0], v[1], v[2]);
                let h = t.tanh(h);
                let s = t.matmul(h, v[3]);
                let st = t.transpose(s);
                let a = t.softmax_rows(st);
                let p = t.matmul(a, h);
                let e = t.exp(p);
                let q = t.mul(e, p);
                t.sum(q)
            },
            leaves,
        );
    }

    #[test]
    fn structural_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let leaves = vec![rand_mat(3, 4, &mut rng), rand_mat(3, 2, &mut rng), rand_mat(2, 6, &mut rng)];
        let c = rand_mat(5, 3, &mut rng);
        let m = rand_mat(3, 6, &mut rng);
        check(
            move |t, v| {
                let a = t.concat_cols(&[v[0], v[1]]);
                let b = t.concat_rows(&[a, v[2]]);
                let s = t.slice_rows(b, 1, 3);
                let s2 = t.slice_cols(s, 2, 3);
                let r = t.reshape(s2, 1, 9);
                let r2 = t.reshape(r, 3, 3);
                let l = t.const_left(c.clone(), r2);
                let x = t.relu(l);
                let y = t.sub(x, l);
                let z = t.scale(y, 1.7);
                let mm = t.mask(a, m.clone());
                let w0 = t.sum(mm);
                let w = t.scalar_mul(w0, w0);
                let q = t.sum(z);
                let o = t.add(q, w);
                t.mul(o, o)
            },
            leaves,
        );
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let a = t.scalar(2.0);
        let b = t.scalar(3.0);
        let c = t.mul(a, a);
        let g = t.backward(c);
        assert!(g.get(b).is_none());
        assert_eq!(g.get(a).unwrap()[(0, 0)], 4.0);
    }
}
