//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] owns every node of the computation graph in creation order,
//! which is a valid topological order by construction; [`Tape::backward`]
//! replays it in reverse, applying each node's vector-Jacobian product and
//! accumulating into parent gradients. Gradient accumulation is additive;
//! callers own zeroing between passes.
//!
//! Broadcasting is limited to scalar * matrix and row-vector-to-all-rows
//! (`add_row`); every other shape mismatch panics so the backward rules
//! stay auditable.
//!
//! A tape and its nodes are confined to one logical thread. Distinct tapes
//! share no state and may run in parallel.

use std::cell::RefCell;

use crate::matrix::Matrix;

/// VJP closure: upstream gradient in, (parent index, contribution) out.
type Vjp = Box<dyn Fn(&Matrix) -> Vec<(usize, Matrix)>>;

struct Node {
    value: Matrix,
    grad: Matrix,
    vjp: Option<Vjp>,
}

/// Computation graph arena. Create nodes with [`Tape::leaf`] and the `Var` ops.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, vjp: Option<Vjp>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        let grad = Matrix::zeros(value.rows(), value.cols());
        nodes.push(Node { value, grad, vjp });
        Var { tape: self, idx }
    }

    /// Insert an input node. Leaves have no backward rule; their gradients
    /// are read out after [`Tape::backward`].
    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(value, None)
    }

    /// 1x1 leaf.
    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.leaf(Matrix::scalar(v))
    }

    /// Insert a unary node with a caller-supplied value and VJP. Extension
    /// point for operators the built-in set does not cover; also used by the
    /// gradient-check harness to exercise detection of broken rules.
    pub fn custom_unary<'t>(
        &'t self,
        input: Var<'t>,
        value: Matrix,
        vjp: impl Fn(&Matrix) -> Matrix + 'static,
    ) -> Var<'t> {
        self.assert_same_tape(input);
        let parent = input.idx;
        self.push(value, Some(Box::new(move |g| vec![(parent, vjp(g))])))
    }

    fn assert_same_tape(&self, v: Var<'_>) {
        assert!(std::ptr::eq(self, v.tape), "variables belong to different tapes");
    }

    fn value_of(&self, idx: usize) -> Matrix {
        self.nodes.borrow()[idx].value.clone()
    }

    /// Accumulate gradients of every node reachable from `root` (which must
    /// be 1x1). Repeated calls without zeroing accumulate additively.
    pub fn backward(&self, root: Var<'_>) {
        self.assert_same_tape(root);
        {
            let mut nodes = self.nodes.borrow_mut();
            let r = &mut nodes[root.idx];
            assert_eq!(
                r.value.shape(),
                (1, 1),
                "backward root must be scalar, got {}x{}",
                r.value.rows(),
                r.value.cols()
            );
            let g = r.grad.item() + 1.0;
            r.grad.set(0, 0, g);
        }
        for i in (0..=root.idx).rev() {
            let contribs = {
                let nodes = self.nodes.borrow();
                let node = &nodes[i];
                match &node.vjp {
                    None => continue,
                    Some(vjp) => {
                        if node.grad.data().iter().all(|&g| g == 0.0) {
                            continue;
                        }
                        vjp(&node.grad)
                    }
                }
            };
            let mut nodes = self.nodes.borrow_mut();
            for (parent, contrib) in contribs {
                nodes[parent].grad.add_assign(&contrib);
            }
        }
    }

    /// Reset every gradient on the tape to zero.
    pub fn zero_grads(&self) {
        let mut nodes = self.nodes.borrow_mut();
        for node in nodes.iter_mut() {
            node.grad = Matrix::zeros(node.value.rows(), node.value.cols());
        }
    }
}

/// Concatenate variables along rows. All parts must share a column count.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat_rows needs at least one part");
    let tape = parts[0].tape;
    let cols = parts[0].cols();
    let mut data = Vec::new();
    let mut offsets = Vec::with_capacity(parts.len());
    let mut row_counts = Vec::with_capacity(parts.len());
    let mut total_rows = 0;
    for p in parts {
        tape.assert_same_tape(*p);
        assert_eq!(p.cols(), cols, "concat_rows column mismatch");
        offsets.push(total_rows);
        row_counts.push(p.rows());
        total_rows += p.rows();
        data.extend_from_slice(tape.value_of(p.idx).data());
    }
    let parents: Vec<usize> = parts.iter().map(|p| p.idx).collect();
    let value = Matrix::new(total_rows, cols, data);
    tape.push(
        value,
        Some(Box::new(move |g| {
            parents
                .iter()
                .zip(offsets.iter().zip(&row_counts))
                .map(|(&p, (&off, &n))| {
                    let mut part = Matrix::zeros(n, cols);
                    for r in 0..n {
                        part.row_mut(r).copy_from_slice(g.row(off + r));
                    }
                    (p, part)
                })
                .collect()
        })),
    )
}

impl<'t> Var<'t> {
    pub fn rows(self) -> usize {
        self.tape.nodes.borrow()[self.idx].value.rows()
    }

    pub fn cols(self) -> usize {
        self.tape.nodes.borrow()[self.idx].value.cols()
    }

    pub fn shape(self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.idx].value.shape()
    }

    /// Clone of this node's forward value.
    pub fn value(self) -> Matrix {
        self.tape.value_of(self.idx)
    }

    /// Scalar value of a 1x1 node.
    pub fn item(self) -> f64 {
        self.value().item()
    }

    /// Clone of this node's accumulated gradient.
    pub fn grad(self) -> Matrix {
        self.tape.nodes.borrow()[self.idx].grad.clone()
    }

    fn binary(
        self,
        other: Var<'t>,
        value: Matrix,
        vjp: impl Fn(&Matrix) -> (Matrix, Matrix) + 'static,
    ) -> Var<'t> {
        self.tape.assert_same_tape(other);
        let (a, b) = (self.idx, other.idx);
        self.tape.push(
            value,
            Some(Box::new(move |g| {
                let (ga, gb) = vjp(g);
                vec![(a, ga), (b, gb)]
            })),
        )
    }

    fn unary(self, value: Matrix, vjp: impl Fn(&Matrix) -> Matrix + 'static) -> Var<'t> {
        let a = self.idx;
        self.tape.push(value, Some(Box::new(move |g| vec![(a, vjp(g))])))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let av = self.value();
        let bv = other.value();
        let value = av.matmul(&bv);
        self.binary(other, value, move |g| {
            (g.matmul(&bv.transpose()), av.transpose().matmul(g))
        })
    }

    pub fn t(self) -> Var<'t> {
        let value = self.value().transpose();
        self.unary(value, |g| g.transpose())
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let value = self.value().add(&other.value());
        self.binary(other, value, |g| (g.clone(), g.clone()))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let value = self.value().sub(&other.value());
        self.binary(other, value, |g| (g.clone(), g.scale(-1.0)))
    }

    /// Elementwise product. Same shape only.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let av = self.value();
        let bv = other.value();
        let value = av.hadamard(&bv);
        self.binary(other, value, move |g| (g.hadamard(&bv), g.hadamard(&av)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let value = self.value().scale(c);
        self.unary(value, move |g| g.scale(c))
    }

    /// Add a 1xk row vector to every row of an nxk matrix.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let m = self.value();
        let r = row.value();
        assert_eq!(r.rows(), 1, "add_row expects a 1xk row vector");
        assert_eq!(m.cols(), r.cols(), "add_row column mismatch: {} vs {}", m.cols(), r.cols());
        let mut value = m.clone();
        for i in 0..value.rows() {
            for j in 0..value.cols() {
                let v = value.get(i, j) + r.get(0, j);
                value.set(i, j, v);
            }
        }
        self.binary(row, value, |g| {
            let mut rg = Matrix::zeros(1, g.cols());
            for i in 0..g.rows() {
                for j in 0..g.cols() {
                    let v = rg.get(0, j) + g.get(i, j);
                    rg.set(0, j, v);
                }
            }
            (g.clone(), rg)
        })
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_rows(self) -> Var<'t> {
        let x = self.value();
        assert!(x.is_finite(), "softmax input must be finite");
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let row = x.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                out.set(i, j, e);
                sum += e;
            }
            for j in 0..x.cols() {
                out.set(i, j, out.get(i, j) / sum);
            }
        }
        let s = out.clone();
        self.unary(out, move |g| {
            let mut dx = Matrix::zeros(g.rows(), g.cols());
            for i in 0..g.rows() {
                let dot: f64 = g.row(i).iter().zip(s.row(i)).map(|(&a, &b)| a * b).sum();
                for j in 0..g.cols() {
                    dx.set(i, j, s.get(i, j) * (g.get(i, j) - dot));
                }
            }
            dx
        })
    }

    /// Elementwise natural log. Panics on nonpositive entries (domain error).
    pub fn log(self) -> Var<'t> {
        let x = self.value();
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                assert!(
                    x.get(i, j) > 0.0,
                    "log domain error: nonpositive entry {} at ({i}, {j})",
                    x.get(i, j)
                );
            }
        }
        let value = x.map(f64::ln);
        self.unary(value, move |g| g.zip_map(&x, |gv, xv| gv / xv))
    }

    pub fn exp(self) -> Var<'t> {
        let x = self.value();
        assert!(x.is_finite(), "exp input must be finite");
        let value = x.map(f64::exp);
        let out = value.clone();
        self.unary(value, move |g| g.hadamard(&out))
    }

    pub fn relu(self) -> Var<'t> {
        let x = self.value();
        let value = x.map(|v| v.max(0.0));
        self.unary(value, move |g| g.zip_map(&x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }))
    }

    /// Normalize each row to unit Euclidean norm. Panics on zero-norm rows;
    /// callers that accept external data pre-check and report the row index.
    pub fn l2norm_rows(self) -> Var<'t> {
        let x = self.value();
        let mut value = Matrix::zeros(x.rows(), x.cols());
        let mut norms = vec![0.0; x.rows()];
        for i in 0..x.rows() {
            let n = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n > 0.0, "l2norm domain error: zero-norm row {i}");
            norms[i] = n;
            for j in 0..x.cols() {
                value.set(i, j, x.get(i, j) / n);
            }
        }
        let y = value.clone();
        self.unary(value, move |g| {
            let mut dx = Matrix::zeros(g.rows(), g.cols());
            for i in 0..g.rows() {
                let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(&a, &b)| a * b).sum();
                for j in 0..g.cols() {
                    dx.set(i, j, (g.get(i, j) - y.get(i, j) * dot) / norms[i]);
                }
            }
            dx
        })
    }

    /// Row sums as an nx1 column vector.
    pub fn row_sum(self) -> Var<'t> {
        let x = self.value();
        let cols = x.cols();
        let data: Vec<f64> = (0..x.rows()).map(|i| x.row(i).iter().sum()).collect();
        let value = Matrix::new(x.rows(), 1, data);
        self.unary(value, move |g| {
            let mut dx = Matrix::zeros(g.rows(), cols);
            for i in 0..g.rows() {
                dx.row_mut(i).fill(g.get(i, 0));
            }
            dx
        })
    }

    /// Row means as an nx1 column vector.
    pub fn row_mean(self) -> Var<'t> {
        let cols = self.cols() as f64;
        self.row_sum().scale(1.0 / cols)
    }

    /// Column means as a 1xk row vector.
    pub fn col_mean(self) -> Var<'t> {
        let x = self.value();
        let rows = x.rows();
        let mut value = Matrix::zeros(1, x.cols());
        for i in 0..rows {
            for j in 0..x.cols() {
                let v = value.get(0, j) + x.get(i, j) / rows as f64;
                value.set(0, j, v);
            }
        }
        self.unary(value, move |g| {
            let mut dx = Matrix::zeros(rows, g.cols());
            for i in 0..rows {
                for j in 0..g.cols() {
                    dx.set(i, j, g.get(0, j) / rows as f64);
                }
            }
            dx
        })
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum_all(self) -> Var<'t> {
        let x = self.value();
        let (rows, cols) = x.shape();
        let value = Matrix::scalar(x.sum());
        self.unary(value, move |g| Matrix::filled(rows, cols, g.item()))
    }

    /// Mean of all entries as a 1x1 node.
    pub fn mean_all(self) -> Var<'t> {
        let n = (self.rows() * self.cols()) as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Gather rows by index. Duplicate indices accumulate gradient.
    pub fn select_rows(self, indices: &[usize]) -> Var<'t> {
        let x = self.value();
        assert!(!indices.is_empty(), "select_rows needs at least one index");
        for &i in indices {
            assert!(i < x.rows(), "select_rows index {i} out of range for {} rows", x.rows());
        }
        let cols = x.cols();
        let src_rows = x.rows();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(x.row(i));
        }
        let idx: Vec<usize> = indices.to_vec();
        let value = Matrix::new(indices.len(), cols, data);
        self.unary(value, move |g| {
            let mut dx = Matrix::zeros(src_rows, cols);
            for (r, &i) in idx.iter().enumerate() {
                for j in 0..cols {
                    let v = dx.get(i, j) + g.get(r, j);
                    dx.set(i, j, v);
                }
            }
            dx
        })
    }

    /// Stop-gradient: a leaf with the same value and no backward rule.
    pub fn detach(self) -> Var<'t> {
        self.tape.leaf(self.value())
    }
}
