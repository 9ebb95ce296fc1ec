//! Reverse-mode autodiff over [`Matrix`] values.
//!
//! A [`Tape`] records one forward pass as a flat list of nodes; calling
//! [`Tape::backward`] on a scalar node walks the list in reverse and
//! accumulates vector-Jacobian products into every node that can reach a
//! gradient-requiring leaf. Shape agreement is asserted at construction
//! time, so a malformed graph fails at the op that built it, not deep in
//! the backward sweep.

use crate::matrix::{matmul, matmul_nt, matmul_tn, Matrix, NumError};
use crate::ops;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    // Stores only the multiplier; the additive constant is baked into the
    // forward value and has zero derivative.
    AffineScalar(usize, f64),
    AddRowVec(usize, usize),
    AddColVec(usize, usize),
    Relu(usize),
    Exp(usize),
    Square(usize),
    RowSoftmax(usize),
    RowLogSoftmax(usize),
    RowL2Normalize(usize, Vec<f64>),
    SumAll(usize),
    RowSum(usize),
    Transpose(usize),
    ConcatRows(usize, usize),
    BceWithLogits(usize, usize),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads[v.0].take()
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a {:?} node", m.shape());
        m.get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Differentiable input (a parameter).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input (data, masks, detached snapshots).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(Matrix::filled(1, 1, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b)).expect("tape matmul");
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::MatMul(a.0, b.0), ng)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = matmul_nt(self.value(a), self.value(b)).expect("tape matmul_nt");
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::MatMulNT(a.0, b.0), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b)).expect("tape add");
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::Add(a.0, b.0), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b)).expect("tape sub");
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::Sub(a.0, b.0), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).hadamard(self.value(b)).expect("tape mul");
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::Mul(a.0, b.0), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine_scalar(a, s, 0.0)
    }

    /// Elementwise `a * mul + add`.
    pub fn affine_scalar(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let value = self.value(a).map(|v| v * mul + add);
        let ng = self.needs(a.0);
        self.push(value, Op::AffineScalar(a.0, mul), ng)
    }

    /// `a + r` with `r` a `1 x m` row broadcast over the rows of `a`.
    pub fn add_row_vec(&mut self, a: Var, r: Var) -> Var {
        let (rows, cols) = self.value(a).shape();
        assert_eq!(self.value(r).shape(), (1, cols), "add_row_vec broadcast");
        let mut value = self.value(a).clone();
        for i in 0..rows {
            for (o, &rv) in value.row_mut(i).iter_mut().zip(self.value(r).data().iter()) {
                *o += rv;
            }
        }
        let ng = self.needs(a.0) || self.needs(r.0);
        self.push(value, Op::AddRowVec(a.0, r.0), ng)
    }

    /// `a + c` with `c` an `n x 1` column broadcast over the columns of `a`.
    pub fn add_col_vec(&mut self, a: Var, c: Var) -> Var {
        let (rows, _cols) = self.value(a).shape();
        assert_eq!(self.value(c).shape(), (rows, 1), "add_col_vec broadcast");
        let mut value = self.value(a).clone();
        for i in 0..rows {
            let cv = self.value(c).get(i, 0);
            for o in value.row_mut(i).iter_mut() {
                *o += cv;
            }
        }
        let ng = self.needs(a.0) || self.needs(c.0);
        self.push(value, Op::AddColVec(a.0, c.0), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = ops::relu(self.value(a));
        let ng = self.needs(a.0);
        self.push(value, Op::Relu(a.0), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let ng = self.needs(a.0);
        self.push(value, Op::Exp(a.0), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        let ng = self.needs(a.0);
        self.push(value, Op::Square(a.0), ng)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = ops::row_softmax(self.value(a));
        let ng = self.needs(a.0);
        self.push(value, Op::RowSoftmax(a.0), ng)
    }

    pub fn row_log_softmax(&mut self, a: Var) -> Var {
        let value = ops::row_log_softmax(self.value(a));
        let ng = self.needs(a.0);
        self.push(value, Op::RowLogSoftmax(a.0), ng)
    }

    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var, NumError> {
        let (value, norms) = ops::row_l2_normalize(self.value(a))?;
        let ng = self.needs(a.0);
        Ok(self.push(value, Op::RowL2Normalize(a.0, norms), ng))
    }

    /// Sum of all elements, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.needs(a.0);
        self.push(value, Op::SumAll(a.0), ng)
    }

    /// Per-row sums, `n x m -> n x 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut value = Matrix::zeros(src.rows(), 1);
        for r in 0..src.rows() {
            value.set(r, 0, src.row(r).iter().sum());
        }
        let ng = self.needs(a.0);
        self.push(value, Op::RowSum(a.0), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.needs(a.0);
        self.push(value, Op::Transpose(a.0), ng)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).concat_rows(self.value(b)).expect("tape concat_rows");
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::ConcatRows(a.0, b.0), ng)
    }

    /// Mean binary cross-entropy between `logits` and 0/1 `targets`,
    /// computed in the overflow-safe form
    /// `max(x, 0) - x*t + ln(1 + exp(-|x|))`. Returns a `1 x 1` node.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Var {
        let x = self.value(logits);
        let t = self.value(targets);
        assert_eq!(x.shape(), t.shape(), "bce_with_logits shapes");
        let n = (x.rows() * x.cols()) as f64;
        let mut acc = 0.0;
        for (&xv, &tv) in x.data().iter().zip(t.data().iter()) {
            acc += xv.max(0.0) - xv * tv + (-xv.abs()).exp().ln_1p();
        }
        let value = Matrix::filled(1, 1, acc / n);
        let ng = self.needs(logits.0) || self.needs(targets.0);
        self.push(value, Op::BceWithLogits(logits.0, targets.0), ng)
    }

    /// Reverse sweep from a scalar `root`. Gradients are populated for
    /// every gradient-requiring node that `root` depends on.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(
            self.value(root).shape(),
            (1, 1),
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].needs_grad {
            return Grads { grads };
        }
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let dy = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Grads { grads }
    }

    fn add_grad(&self, grads: &mut [Option<Matrix>], idx: usize, delta: Matrix) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        match &mut grads[idx] {
            Some(g) => g.add_scaled(&delta, 1.0).expect("grad accumulate"),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate(&self, i: usize, dy: &Matrix, grads: &mut [Option<Matrix>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let da = matmul_nt(dy, &self.nodes[*b].value).unwrap();
                    self.add_grad(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = matmul_tn(&self.nodes[*a].value, dy).unwrap();
                    self.add_grad(grads, *b, db);
                }
            }
            Op::MatMulNT(a, b) => {
                if self.needs(*a) {
                    let da = matmul(dy, &self.nodes[*b].value).unwrap();
                    self.add_grad(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = matmul_tn(dy, &self.nodes[*a].value).unwrap();
                    self.add_grad(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.add_grad(grads, *a, dy.clone());
                self.add_grad(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, dy.clone());
                self.add_grad(grads, *b, dy.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.add_grad(grads, *a, dy.hadamard(&self.nodes[*b].value).unwrap());
                }
                if self.needs(*b) {
                    self.add_grad(grads, *b, dy.hadamard(&self.nodes[*a].value).unwrap());
                }
            }
            Op::AffineScalar(a, mul) => {
                self.add_grad(grads, *a, dy.scale(*mul));
            }
            Op::AddRowVec(a, r) => {
                self.add_grad(grads, *a, dy.clone());
                if self.needs(*r) {
                    let mut dr = Matrix::zeros(1, dy.cols());
                    for i in 0..dy.rows() {
                        for (acc, &v) in dr.data_mut().iter_mut().zip(dy.row(i).iter()) {
                            *acc += v;
                        }
                    }
                    self.add_grad(grads, *r, dr);
                }
            }
            Op::AddColVec(a, c) => {
                self.add_grad(grads, *a, dy.clone());
                if self.needs(*c) {
                    let mut dc = Matrix::zeros(dy.rows(), 1);
                    for i in 0..dy.rows() {
                        dc.set(i, 0, dy.row(i).iter().sum());
                    }
                    self.add_grad(grads, *c, dc);
                }
            }
            Op::Relu(a) => {
                let x = &self.nodes[*a].value;
                let mut da = dy.clone();
                for (g, &xv) in da.data_mut().iter_mut().zip(x.data().iter()) {
                    if xv <= 0.0 {
                        *g = 0.0;
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::Exp(a) => {
                self.add_grad(grads, *a, dy.hadamard(&self.nodes[i].value).unwrap());
            }
            Op::Square(a) => {
                let da = dy.hadamard(&self.nodes[*a].value).unwrap().scale(2.0);
                self.add_grad(grads, *a, da);
            }
            Op::RowSoftmax(a) => {
                let s = &self.nodes[i].value;
                let mut da = Matrix::zeros(dy.rows(), dy.cols());
                for r in 0..dy.rows() {
                    let dot: f64 = dy
                        .row(r)
                        .iter()
                        .zip(s.row(r).iter())
                        .map(|(&g, &p)| g * p)
                        .sum();
                    for ((o, &g), &p) in da
                        .row_mut(r)
                        .iter_mut()
                        .zip(dy.row(r).iter())
                        .zip(s.row(r).iter())
                    {
                        *o = p * (g - dot);
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::RowLogSoftmax(a) => {
                let y = &self.nodes[i].value;
                let mut da = dy.clone();
                for r in 0..dy.rows() {
                    let rowsum: f64 = dy.row(r).iter().sum();
                    for (o, &yv) in da.row_mut(r).iter_mut().zip(y.row(r).iter()) {
                        *o -= yv.exp() * rowsum;
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::RowL2Normalize(a, norms) => {
                let y = &self.nodes[i].value;
                let mut da = Matrix::zeros(dy.rows(), dy.cols());
                for r in 0..dy.rows() {
                    let dot: f64 = dy
                        .row(r)
                        .iter()
                        .zip(y.row(r).iter())
                        .map(|(&g, &u)| g * u)
                        .sum();
                    let inv = 1.0 / norms[r];
                    for ((o, &g), &u) in da
                        .row_mut(r)
                        .iter_mut()
                        .zip(dy.row(r).iter())
                        .zip(y.row(r).iter())
                    {
                        *o = (g - u * dot) * inv;
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::SumAll(a) => {
                let g = dy.get(0, 0);
                let src = &self.nodes[*a].value;
                self.add_grad(grads, *a, Matrix::filled(src.rows(), src.cols(), g));
            }
            Op::RowSum(a) => {
                let src = &self.nodes[*a].value;
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for r in 0..src.rows() {
                    let g = dy.get(r, 0);
                    for o in da.row_mut(r).iter_mut() {
                        *o = g;
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::Transpose(a) => {
                self.add_grad(grads, *a, dy.transpose());
            }
            Op::ConcatRows(a, b) => {
                let ra = self.nodes[*a].value.rows();
                if self.needs(*a) {
                    let da = dy.select_rows(&(0..ra).collect::<Vec<_>>()).unwrap();
                    self.add_grad(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = dy
                        .select_rows(&(ra..dy.rows()).collect::<Vec<_>>())
                        .unwrap();
                    self.add_grad(grads, *b, db);
                }
            }
            Op::BceWithLogits(logits, targets) => {
                let x = &self.nodes[*logits].value;
                let t = &self.nodes[*targets].value;
                let scale = dy.get(0, 0) / (x.rows() * x.cols()) as f64;
                if self.needs(*logits) {
                    let mut da = Matrix::zeros(x.rows(), x.cols());
                    for ((o, &xv), &tv) in da
                        .data_mut()
                        .iter_mut()
                        .zip(x.data().iter())
                        .zip(t.data().iter())
                    {
                        let sig = if xv >= 0.0 {
                            1.0 / (1.0 + (-xv).exp())
                        } else {
                            let e = xv.exp();
                            e / (1.0 + e)
                        };
                        *o = (sig - tv) * scale;
                    }
                    self.add_grad(grads, *logits, da);
                }
                if self.needs(*targets) {
                    let dt = x.scale(-scale);
                    self.add_grad(grads, *targets, dt);
                }
            }
        }
    }
}
