//! Reverse-mode tape over dense matrices.
//!
//! Every forward op appends a node holding its value; parents always precede
//! children, so a single reverse sweep over the node list is a valid
//! topological order for the backward pass.

use super::tensor::{gemm, norm, Tensor};
use crate::error::{Error, Result};

/// Rows whose norm falls below this are rejected by [`Tape::l2_normalize`].
pub const EPS_NORM: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
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
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + 1 ⊗ row`, broadcasting a `1 x c` row over every row of `a`.
    AddRow(Var, Var),
    Scale(Var, f64),
    /// Per-row constant scale.
    ScaleRows(Var, Vec<f64>),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Normalize(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    /// Max over each row's entries; keeps the winning column per row.
    RowMax(Var, Vec<usize>),
    RowLogSumExp(Var),
    /// Picks column `idx[i]` from row `i`.
    Pick(Var, Vec<usize>),
    /// `out[k] = a[k + 1] - a[k]` over rows.
    RowDiff(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::ScaleRows(..) => "scale_rows",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Normalize(..) => "l2_normalize",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowMax(..) => "row_max",
            Op::RowLogSumExp(..) => "row_logsumexp",
            Op::Pick(..) => "pick",
            Op::RowDiff(..) => "row_diff",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    dims: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`, zeros when nothing flowed into it.
    pub fn get(&self, v: Var) -> Vec<f64> {
        match &self.adjoints[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.dims[v.0];
                vec![0.0; r * c]
            }
        }
    }

    /// Gradient shaped like `like`.
    pub fn tensor(&self, v: Var, like: &Tensor) -> Tensor {
        Tensor::new(like.shape().to_vec(), self.get(v)).expect("gradient shape follows its leaf")
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        let (rows, cols) = t.dims();
        self.nodes.push(Node { op: Op::Leaf, rows, cols, value: t.data().to_vec(), requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::matrix(n.rows, n.cols, n.value.clone()).expect("node dims are consistent")
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        let idx = self.nodes.len();
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: idx, op: op.name() });
        }
        let requires_grad = self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { op, rows, cols, value, requires_grad });
        Ok(Var(idx))
    }

    fn parents(&self, op: &Op) -> Vec<Var> {
        match *op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulNt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::ScaleRows(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Normalize(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowMax(a, _)
            | Op::RowLogSumExp(a)
            | Op::Pick(a, _)
            | Op::RowDiff(a) => vec![a],
        }
    }

    fn same_dims(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::shape(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), (k, 1), self.value(b), (n, 1), 0.0, &mut out);
        self.push(Op::MatMul(a, b), m, n, out)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul_nt {m}x{k} by ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), (k, 1), self.value(b), (1, k), 0.0, &mut out);
        self.push(Op::MatMulNt(a, b), m, n, out)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (r, c) = self.same_dims(a, b, op.name())?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        self.push(op, r, c, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(row) != (1, c) {
            return Err(Error::shape(format!("add_row: {:?} onto {r}x{c}", self.dims(row))));
        }
        let bias = self.value(row);
        let out = self
            .value(a)
            .chunks_exact(c)
            .flat_map(|xs| xs.iter().zip(bias).map(|(x, b)| x + b))
            .collect();
        self.push(Op::AddRow(a, row), r, c, out)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op, r, c, out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn scale_rows(&mut self, a: Var, s: Vec<f64>) -> Result<Var> {
        let (r, c) = self.dims(a);
        if s.len() != r {
            return Err(Error::shape(format!("scale_rows: {} scales for {r} rows", s.len())));
        }
        let out = self
            .value(a)
            .chunks_exact(c)
            .zip(&s)
            .flat_map(|(xs, &k)| xs.iter().map(move |x| x * k))
            .collect();
        self.push(Op::ScaleRows(a, s), r, c, out)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Square(a), |x| x * x)
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let src = self.value(a);
        let mut norms = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for (i, row) in src.chunks_exact(c).enumerate() {
            let n = norm(row);
            if !(n >= EPS_NORM) {
                return Err(Error::Degenerate { row: i, norm: n });
            }
            norms.push(n);
            out.extend(row.iter().map(|x| x / n));
        }
        self.push(Op::Normalize(a, norms), r, c, out)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push(Op::Sum(a), 1, 1, vec![s])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(a), 1, 1, vec![s])
    }

    /// Row-wise max; ties go to the lowest column.
    pub fn row_max(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let mut arg = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r);
        for row in self.value(a).chunks_exact(c) {
            let (j, m) = argmax(row);
            arg.push(j);
            out.push(m);
        }
        self.push(Op::RowMax(a, arg), r, 1, out)
    }

    /// `log Σ_j exp(a_ij)` per row, shifted by the row max.
    pub fn row_logsumexp(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let out = self
            .value(a)
            .chunks_exact(c)
            .map(|row| {
                let m = argmax(row).1;
                m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
            })
            .collect();
        self.push(Op::RowLogSumExp(a), r, 1, out)
    }

    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let (r, c) = self.dims(a);
        if idx.len() != r || idx.iter().any(|&j| j >= c) {
            return Err(Error::shape(format!("pick: {} indices into {r}x{c}", idx.len())));
        }
        let v = self.value(a);
        let out = idx.iter().enumerate().map(|(i, &j)| v[i * c + j]).collect();
        self.push(Op::Pick(a, idx), r, 1, out)
    }

    pub fn row_diff(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r < 2 {
            return Err(Error::shape(format!("row_diff needs 2+ rows, got {r}")));
        }
        let v = self.value(a);
        let out = (0..(r - 1) * c).map(|i| v[i + c] - v[i]).collect();
        self.push(Op::RowDiff(a), r - 1, c, out)
    }

    /// Reverse sweep from a scalar `loss`. The tape is left untouched, so the
    /// sweep can be repeated.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if (root.rows, root.cols) != (1, 1) {
            return Err(Error::shape(format!("backward from {}x{} node", root.rows, root.cols)));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut adj);
            }
            adj[i] = Some(g);
        }
        Ok(Gradients {
            adjoints: adj,
            dims: self.nodes.iter().map(|n| (n.rows, n.cols)).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let (r, c) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                // C = A·B, A m×k, B k×n
                let (m, k) = self.dims(a);
                let n = c;
                if self.wants(a) {
                    let da = slot(adj, a, m * k);
                    gemm(m, n, k, g, (n, 1), self.value(b), (1, n), 1.0, da);
                }
                if self.wants(b) {
                    let db = slot(adj, b, k * n);
                    gemm(k, m, n, self.value(a), (1, k), g, (n, 1), 1.0, db);
                }
            }
            &Op::MatMulNt(a, b) => {
                // C = A·Bᵀ, A m×k, B n×k
                let (m, k) = self.dims(a);
                let n = c;
                if self.wants(a) {
                    let da = slot(adj, a, m * k);
                    gemm(m, n, k, g, (n, 1), self.value(b), (k, 1), 1.0, da);
                }
                if self.wants(b) {
                    let db = slot(adj, b, n * k);
                    gemm(n, m, k, g, (1, n), self.value(a), (k, 1), 1.0, db);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(adj, a, g.iter().copied());
                self.accumulate(adj, b, g.iter().copied());
            }
            &Op::Sub(a, b) => {
                self.accumulate(adj, a, g.iter().copied());
                self.accumulate(adj, b, g.iter().map(|x| -x));
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                self.accumulate(adj, a, g.iter().zip(vb).map(|(g, y)| g * y));
                self.accumulate(adj, b, g.iter().zip(va).map(|(g, x)| g * x));
            }
            &Op::AddRow(a, row) => {
                self.accumulate(adj, a, g.iter().copied());
                if self.wants(row) {
                    let mut s = vec![0.0; c];
                    for gr in g.chunks_exact(c) {
                        for (acc, x) in s.iter_mut().zip(gr) {
                            *acc += x;
                        }
                    }
                    self.accumulate(adj, row, s.into_iter());
                }
            }
            &Op::Scale(a, s) => self.accumulate(adj, a, g.iter().map(|x| x * s)),
            Op::ScaleRows(a, s) => {
                let it = g.chunks_exact(c).zip(s).flat_map(|(gr, &k)| gr.iter().map(move |x| x * k));
                self.accumulate(adj, *a, it);
            }
            &Op::Relu(a) => {
                let x = self.value(a);
                self.accumulate(adj, a, g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }));
            }
            &Op::Tanh(a) => {
                let y = &node.value;
                self.accumulate(adj, a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)));
            }
            &Op::Exp(a) => {
                let y = &node.value;
                self.accumulate(adj, a, g.iter().zip(y).map(|(g, y)| g * y));
            }
            &Op::Log(a) => {
                let x = self.value(a);
                self.accumulate(adj, a, g.iter().zip(x).map(|(g, x)| g / x));
            }
            &Op::Square(a) => {
                let x = self.value(a);
                self.accumulate(adj, a, g.iter().zip(x).map(|(g, x)| 2.0 * g * x));
            }
            Op::Normalize(a, norms) => {
                // dx = (dy − ŷ(ŷ·dy)) / ‖x‖
                let y = &node.value;
                let mut dx = Vec::with_capacity(r * c);
                for ((yr, gr), n) in y.chunks_exact(c).zip(g.chunks_exact(c)).zip(norms) {
                    let p = super::tensor::dot(yr, gr);
                    dx.extend(yr.iter().zip(gr).map(|(y, g)| (g - y * p) / n));
                }
                self.accumulate(adj, *a, dx.into_iter());
            }
            &Op::Sum(a) => {
                let len = self.value(a).len();
                self.accumulate(adj, a, std::iter::repeat_n(g[0], len));
            }
            &Op::Mean(a) => {
                let len = self.value(a).len();
                self.accumulate(adj, a, std::iter::repeat_n(g[0] / len as f64, len));
            }
            Op::RowMax(a, arg) => {
                let (ra, ca) = self.dims(*a);
                if self.wants(*a) {
                    let da = slot(adj, *a, ra * ca);
                    for (i, &j) in arg.iter().enumerate() {
                        da[i * ca + j] += g[i];
                    }
                }
            }
            &Op::RowLogSumExp(a) => {
                let (ra, ca) = self.dims(a);
                if self.wants(a) {
                    let x = self.value(a);
                    let da = slot(adj, a, ra * ca);
                    for i in 0..ra {
                        let lse = node.value[i];
                        for j in 0..ca {
                            da[i * ca + j] += g[i] * (x[i * ca + j] - lse).exp();
                        }
                    }
                }
            }
            Op::Pick(a, idx) => {
                let (ra, ca) = self.dims(*a);
                if self.wants(*a) {
                    let da = slot(adj, *a, ra * ca);
                    for (i, &j) in idx.iter().enumerate() {
                        da[i * ca + j] += g[i];
                    }
                }
            }
            &Op::RowDiff(a) => {
                let (ra, ca) = self.dims(a);
                if self.wants(a) {
                    let da = slot(adj, a, ra * ca);
                    for (i, gi) in g.iter().enumerate() {
                        da[i + ca] += gi;
                        da[i] -= gi;
                    }
                }
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, adj: &mut [Option<Vec<f64>>], v: Var, it: impl Iterator<Item = f64>) {
        if !self.wants(v) {
            return;
        }
        let n = self.nodes[v.0].value.len();
        for (acc, x) in slot(adj, v, n).iter_mut().zip(it) {
            *acc += x;
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// First index of the maximum.
pub(crate) fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = (0, row[0]);
    for (j, &x) in row.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (j, x);
        }
    }
    best
}

/// Runs `f` on a fresh tape with `params` as trainable leaves and returns the
/// scalar value together with one gradient per parameter.
pub fn value_and_grad<F>(f: F, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let value = tape.scalar(loss);
    let out = vars.iter().zip(params).map(|(&v, p)| grads.tensor(v, p)).collect();
    Ok((value, out))
}
