//! Reverse-mode differentiation over a dynamically recorded graph.
//!
//! A [`Graph`] is an append-only tape of rank-2 tensors. Every operation
//! evaluates eagerly, stores its value and remembers its inputs; calling
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! every leaf created with [`Graph::param`].
//!
//! Shape mismatches inside the tape are programming errors and panic; the
//! public model functions validate their inputs before recording anything.

use super::expm::expm;
use super::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    Sum(Var),
    RowNormalize(Var),
    // cached exp(B o B) for the backward pass
    NotearsH(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant leaf: no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A trainable leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        assert!(value.is_matrix(), "graph tensors are rank 2, got {:?}", value.shape());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "scalar() on {:?}", t.shape());
        t.data()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols(), tb.rows(), "matmul {:?} x {:?}", ta.shape(), tb.shape());
        let mut out = Tensor::zeros(&[ta.rows(), tb.cols()]);
        gemm(ta, false, tb, false, &mut out, 0.0);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.elementwise(a, b, |x, y| x + y, "add");
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.elementwise(a, b, |x, y| x - y, "sub");
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.elementwise(a, b, |x, y| x * y, "mul");
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    fn elementwise(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, what: &str) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "{} shape mismatch", what);
        ta.zip_map(tb, f).expect("shapes checked")
    }

    /// Adds a `1 x n` row vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        assert_eq!(tr.shape(), [1, ta.cols()], "add_row bias shape");
        let mut out = ta.clone();
        let c = ta.cols();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v += tr.data()[k % c];
        }
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self
            .value(a)
            .clone()
            .reshape(&[rows, cols])
            .expect("reshape element count");
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat row mismatch");
                t.cols()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(rows, total, data).expect("concat size");
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Divides each row by its sum; all-zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let out = row_normalize(self.value(a));
        self.push(out, Op::RowNormalize(a), &[a])
    }

    /// `tr(exp(B o B)) - n` for a square `B`.
    pub fn notears_h(&mut self, b: Var) -> Var {
        let tb = self.value(b);
        assert!(tb.is_square(), "notears_h needs a square matrix");
        let n = tb.rows();
        let sq = tb.map(|v| v * v);
        let e = expm(&sq).expect("finite square input");
        let out = Tensor::scalar(e.trace() - n as f64);
        self.push(out, Op::NotearsH(b, e), &[b])
    }

    pub fn backward(&self, root: Var) -> Gradients {
        self.backward_seeded(&[(root, 1.0)])
    }

    /// Gradient of `sum_i c_i * root_i` for scalar roots.
    pub fn backward_seeded(&self, seeds: &[(Var, f64)]) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let mut top = 0;
        for &(v, c) in seeds {
            assert_eq!(self.value(v).len(), 1, "backward root must be scalar");
            accumulate(&mut grads, v, Tensor::scalar(c));
            top = top.max(v.0 + 1);
        }

        for i in (0..top).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, g, &mut grads);
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut da = Tensor::zeros(ta.shape());
                    gemm(&g, false, tb, true, &mut da, 0.0);
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(tb.shape());
                    gemm(ta, true, &g, false, &mut db, 0.0);
                    accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                if self.needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
                accumulate(grads, *a, g);
            }
            Op::Sub(a, b) => {
                if self.needs(*b) {
                    accumulate(grads, *b, g.scale(-1.0));
                }
                accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.hadamard(self.value(*b)).unwrap());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.hadamard(self.value(*a)).unwrap());
                }
            }
            Op::AddRow(a, row) => {
                if self.needs(*row) {
                    let c = g.cols();
                    let mut db = vec![0.0; c];
                    for (k, v) in g.data().iter().enumerate() {
                        db[k % c] += v;
                    }
                    accumulate(grads, *row, Tensor::matrix(1, c, db).unwrap());
                }
                accumulate(grads, *a, g);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.scale(*c)),
            Op::AddScalar(a) => accumulate(grads, *a, g),
            Op::Sigmoid(a) => {
                accumulate(grads, *a, g.zip_map(y, |g, s| g * s * (1.0 - s)).unwrap())
            }
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(y, |g, t| g * (1.0 - t * t)).unwrap()),
            Op::Relu(a) => accumulate(
                grads,
                *a,
                g.zip_map(y, |g, r| if r > 0.0 { g } else { 0.0 }).unwrap(),
            ),
            Op::Abs(a) => accumulate(
                grads,
                *a,
                g.zip_map(self.value(*a), |g, x| g * sign(x)).unwrap(),
            ),
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(grads, *a, g.reshape(&shape).unwrap());
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let piece = Tensor::from_fn(rows, w, |i, j| g.get(i, offset + j));
                        accumulate(grads, p, piece);
                    }
                    offset += w;
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                accumulate(grads, *a, Tensor::full(self.value(*a).shape(), s));
            }
            Op::RowNormalize(a) => {
                let ta = self.value(*a);
                let (r, c) = (ta.rows(), ta.cols());
                let mut da = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    let s: f64 = ta.row(i).iter().sum();
                    if s == 0.0 {
                        continue;
                    }
                    let dot: f64 = (0..c).map(|j| g.get(i, j) * y.get(i, j)).sum();
                    for j in 0..c {
                        da.set(i, j, (g.get(i, j) - dot) / s);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::NotearsH(b, e) => {
                let s = g.data()[0];
                let tb = self.value(*b);
                let n = tb.rows();
                let db = Tensor::from_fn(n, n, |i, j| s * 2.0 * tb.get(i, j) * e.get(j, i));
                accumulate(grads, *b, db);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot => *slot = Some(g),
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row normalisation with the pseudo-inverse convention for zero rows.
pub fn row_normalize(a: &Tensor) -> Tensor {
    let (r, c) = (a.rows(), a.cols());
    let mut out = a.clone();
    for i in 0..r {
        let s: f64 = a.row(i).iter().sum();
        if s != 0.0 {
            for j in 0..c {
                out.set(i, j, a.get(i, j) / s);
            }
        }
    }
    out
}

/// Gradients of a scalar root with respect to the trainable leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_sum_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::from_fn(2, 3, |i, j| (i + j) as f64));
        let b = g.param(Tensor::from_fn(3, 2, |i, j| (i * 2 + j) as f64 - 1.0));
        let c = g.matmul(a, b);
        let s = g.sum(c);
        let grads = g.backward(s);
        // d sum(AB)/dA_ij = sum_k B_jk
        let da = grads.wrt(a).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let want: f64 = (0..2).map(|k| g.value(b).get(j, k)).sum();
                assert_eq!(da.get(i, j), want);
            }
        }
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(2.0));
        let w = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, w);
        let grads = g.backward(y);
        assert!(grads.wrt(x).is_none());
        assert_eq!(grads.wrt(w).unwrap().data(), &[2.0]);
    }

    #[test]
    fn reused_node_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x);
        let grads = g.backward(y);
        assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn seeded_backward_is_linear() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(1.5));
        let a = g.scale(x, 2.0);
        let b = g.mul(x, x);
        let grads = g.backward_seeded(&[(a, 0.5), (b, 2.0)]);
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.5 * 2.0 + 2.0 * 3.0]);
    }

    #[test]
    fn row_normalize_keeps_zero_rows() {
        let a = Tensor::from_rows(&[vec![2.0, 2.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let y = row_normalize(&a);
        assert_eq!(y.row(0), &[0.5, 0.5, 0.0]);
        assert_eq!(y.row(1), &[0.0, 0.0, 0.0]);
    }
}
