//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive in execution order, so the node list is
//! already topologically sorted and the backward sweep is a single reverse
//! pass. Sparse operands enter only as constants (graph structure is data).

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{Dense, Sparse};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<Sparse<T>>, Var),
    Transpose(Var),
    RowSoftmax(Var),
    Relu(Var),
    Binary(BinOp, Broadcast, Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Log(Var),
    Exp(Var),
    ClampMin(Var, T),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, Range<usize>),
    ConcatCols(Vec<Var>),
    RowNorm(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Binary(_, _, a, b) => vec![*a, *b],
            Op::SpMM(_, x)
            | Op::Transpose(x)
            | Op::RowSoftmax(x)
            | Op::Relu(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Log(x)
            | Op::Exp(x)
            | Op::ClampMin(x, _)
            | Op::Sum(x)
            | Op::SumRows(x)
            | Op::SumCols(x)
            | Op::GatherRows(x, _)
            | Op::SliceCols(x, _)
            | Op::RowNorm(x) => vec![*x],
            Op::ConcatCols(parts) => parts.clone(),
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Dense<T>,
    op: Op<T>,
    // some parameter lies upstream of this node
    live: bool,
}

/// Execution record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Dense<T>, op: Op<T>) -> Var {
        let live = op.inputs().iter().any(|v| self.nodes[v.0].live);
        self.nodes.push(Node { value, op, live });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Dense<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        self.value(v).item()
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Records a constant.
    pub fn constant(&mut self, value: Dense<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a named leaf whose gradient [`Tape::gradients`] reports.
    pub fn param(&mut self, name: &str, value: Dense<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].live = true;
        self.params.push((name.to_string(), v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn spmm(&mut self, a: &Arc<Sparse<T>>, x: Var) -> Result<Var> {
        let out = a.spmm(self.value(x))?;
        Ok(self.push(out, Op::SpMM(Arc::clone(a), x)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    /// Softmax along each row, stabilised by subtracting the row max.
    pub fn row_softmax(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut out = src.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push(out, Op::RowSoftmax(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v < T::zero() { T::zero() } else { v });
        self.push(out, Op::Relu(x))
    }

    fn binary(&mut self, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let bc = if (ra, ca) == (rb, cb) {
            Broadcast::Same
        } else if (rb, cb) == (1, 1) {
            Broadcast::Scalar
        } else if rb == 1 && cb == ca {
            Broadcast::Row
        } else if cb == 1 && rb == ra {
            Broadcast::Col
        } else {
            return Err(Error::shape("elementwise", format!("{ra}x{ca} with {rb}x{cb}")));
        };
        let (av, bv) = (self.value(a), self.value(b));
        let out = Dense::from_fn(ra, ca, |i, j| {
            let x = av[(i, j)];
            let y = broadcast_get(bv, bc, i, j);
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
            }
        });
        Ok(self.push(out, Op::Binary(op, bc, a, b)))
    }

    /// Elementwise `a + b`; `b` may be a row vector, a column vector or a 1x1.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    /// Natural log with inputs clamped below at 1e-12.
    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v < T::tiny() { T::tiny().ln() } else { v.ln() });
        self.push(out, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::exp);
        self.push(out, Op::Exp(x))
    }

    /// `max(x, floor)`; the gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: T) -> Var {
        let out = self.value(x).map(|v| if v < floor { floor } else { v });
        self.push(out, Op::ClampMin(x, floor))
    }

    /// Sum of every entry, as a 1x1.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Dense::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Reduces over rows: `n x d -> 1 x d` column sums.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut out = Dense::zeros(1, src.cols());
        for i in 0..src.rows() {
            for (o, &v) in out.row_mut(0).iter_mut().zip(src.row(i)) {
                *o += v;
            }
        }
        self.push(out, Op::SumRows(x))
    }

    /// Reduces over columns: `n x d -> n x 1` row sums.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let out = Dense::from_fn(src.rows(), 1, |i, _| src.row(i).iter().copied().sum());
        self.push(out, Op::SumCols(x))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let n = self.shape(x).0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {n}")));
        }
        let out = self.value(x).select_rows(idx);
        Ok(self.push(out, Op::GatherRows(x, idx.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, cols: Range<usize>) -> Result<Var> {
        let (r, c) = self.shape(x);
        if cols.start > cols.end || cols.end > c {
            return Err(Error::shape("slice_cols", format!("{cols:?} of {c} columns")));
        }
        let src = self.value(x);
        let out = Dense::from_fn(r, cols.len(), |i, j| src[(i, cols.start + j)]);
        Ok(self.push(out, Op::SliceCols(x, cols)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Dense::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let src = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[offset..offset + src.cols()].copy_from_slice(src.row(i));
            }
            offset += src.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Euclidean norm of each row, `n x d -> n x 1`.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let out = Dense::from_fn(src.rows(), 1, |i, _| src.row(i).iter().map(|&v| v * v).sum::<T>().sqrt());
        self.push(out, Op::RowNorm(x))
    }

    /// Row-wise cosine similarity of two equally shaped matrices, `n x 1`.
    /// Norms are floored at 1e-12 so zero rows give similarity 0.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let prod = self.mul(a, b)?;
        let dot = self.sum_cols(prod);
        let na = self.row_norm(a);
        let na = self.clamp_min(na, T::tiny());
        let nb = self.row_norm(b);
        let nb = self.clamp_min(nb, T::tiny());
        let den = self.mul(na, nb)?;
        self.div(dot, den)
    }

    /// Row-wise `x − logsumexp(x)`, shifted by the (constant) row max.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let max = Dense::from_fn(src.rows(), 1, |i, _| src.row(i).iter().copied().fold(T::neg_infinity(), T::max));
        let max = self.constant(max);
        let shifted = self.sub(x, max)?;
        let e = self.exp(shifted);
        let z = self.sum_cols(e);
        let lz = self.log(z);
        self.sub(shifted, lz)
    }

    /// Mean negative log-likelihood of `labels` under row-softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.shape(logits);
        if labels.len() != n || labels.iter().any(|&l| l >= c) {
            return Err(Error::shape("cross_entropy", format!("{} labels for {n}x{c} logits", labels.len())));
        }
        let lp = self.log_softmax(logits)?;
        let y = self.constant(Dense::one_hot(labels, c));
        let picked = self.mul(lp, y)?;
        let total = self.sum(picked);
        Ok(self.scale(total, -T::one() / T::of(n.max(1) as f64)))
    }

    /// `0.5 * Σ x²`.
    pub fn half_sq_norm(&mut self, x: Var) -> Result<Var> {
        let sq = self.mul(x, x)?;
        let s = self.sum(sq);
        Ok(self.scale(s, T::of(0.5)))
    }

    /// Backpropagates from a scalar `loss` and returns the gradient of every
    /// parameter registered with [`Tape::param`]. Parameters the loss does
    /// not depend on get zeros.
    pub fn gradients(&self, loss: Var) -> Result<BTreeMap<String, Dense<T>>> {
        let grads = self.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, v) in &self.params {
            let g = grads[v.0].clone().unwrap_or_else(|| {
                let (r, c) = self.shape(*v);
                Dense::zeros(r, c)
            });
            match out.get_mut(name) {
                // the same name bound twice: contributions add
                Some(acc) => accumulate(acc, &g),
                None => {
                    out.insert(name.clone(), g);
                }
            }
        }
        Ok(out)
    }

    /// Gradients of `loss` with respect to every node that depends on a
    /// parameter; nodes built from constants alone are left as `None`.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Dense<T>>>> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::contract(format!("loss must be a 1x1 scalar, got {r}x{c}")));
        }
        let mut grads: Vec<Option<Dense<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Dense::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].live {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, idx: usize, g: &Dense<T>, grads: &mut [Option<Dense<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].live {
                    add_grad(grads, *a, g.matmul_t(self.value(*b))?);
                }
                if self.nodes[b.0].live {
                    add_grad(grads, *b, self.value(*a).t_matmul(g)?);
                }
            }
            Op::SpMM(a, x) => add_grad(grads, *x, a.spmm_t(g)?),
            Op::Transpose(x) => add_grad(grads, *x, g.transpose()),
            Op::RowSoftmax(x) => {
                let mut gx = g.clone();
                for i in 0..out.rows() {
                    let y = out.row(i);
                    let gy = g.row(i);
                    let dot: T = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                    for ((o, &yi), &gi) in gx.row_mut(i).iter_mut().zip(y).zip(gy) {
                        *o = yi * (gi - dot);
                    }
                }
                add_grad(grads, *x, gx);
            }
            Op::Relu(x) => {
                let src = self.value(*x);
                let gx = src.zip_map(g, |v, gv| if v > T::zero() { gv } else { T::zero() })?;
                add_grad(grads, *x, gx);
            }
            Op::Binary(op, bc, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Dense::zeros(av.rows(), av.cols());
                let mut gb = Dense::zeros(bv.rows(), bv.cols());
                for i in 0..av.rows() {
                    for j in 0..av.cols() {
                        let gv = g[(i, j)];
                        let x = av[(i, j)];
                        let y = broadcast_get(bv, *bc, i, j);
                        let (da, db) = match op {
                            BinOp::Add => (gv, gv),
                            BinOp::Sub => (gv, -gv),
                            BinOp::Mul => (gv * y, gv * x),
                            BinOp::Div => (gv / y, -gv * x / (y * y)),
                        };
                        ga[(i, j)] = da;
                        *broadcast_get_mut(&mut gb, *bc, i, j) += db;
                    }
                }
                add_grad(grads, *a, ga);
                add_grad(grads, *b, gb);
            }
            Op::Scale(x, c) => add_grad(grads, *x, g.map(|v| v * *c)),
            Op::AddScalar(x) => add_grad(grads, *x, g.clone()),
            Op::Log(x) => {
                let gx = self.value(*x).zip_map(g, |v, gv| if v > T::tiny() { gv / v } else { T::zero() })?;
                add_grad(grads, *x, gx);
            }
            Op::Exp(x) => add_grad(grads, *x, out.zip_map(g, |y, gv| y * gv)?),
            Op::ClampMin(x, floor) => {
                let gx = self.value(*x).zip_map(g, |v, gv| if v > *floor { gv } else { T::zero() })?;
                add_grad(grads, *x, gx);
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                add_grad(grads, *x, Dense::filled(r, c, g.item()?));
            }
            Op::SumRows(x) => {
                let (r, c) = self.shape(*x);
                add_grad(grads, *x, Dense::from_fn(r, c, |_, j| g[(0, j)]));
            }
            Op::SumCols(x) => {
                let (r, c) = self.shape(*x);
                add_grad(grads, *x, Dense::from_fn(r, c, |i, _| g[(i, 0)]));
            }
            Op::GatherRows(x, idx) => {
                let (r, c) = self.shape(*x);
                let mut gx = Dense::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                add_grad(grads, *x, gx);
            }
            Op::SliceCols(x, cols) => {
                let (r, c) = self.shape(*x);
                let mut gx = Dense::zeros(r, c);
                for i in 0..r {
                    gx.row_mut(i)[cols.clone()].copy_from_slice(g.row(i));
                }
                add_grad(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let gp = Dense::from_fn(r, c, |i, j| g[(i, offset + j)]);
                    offset += c;
                    add_grad(grads, p, gp);
                }
            }
            Op::RowNorm(x) => {
                let src = self.value(*x);
                let gx = Dense::from_fn(src.rows(), src.cols(), |i, j| {
                    let n = out[(i, 0)];
                    if n > T::zero() {
                        g[(i, 0)] * src[(i, j)] / n
                    } else {
                        T::zero()
                    }
                });
                add_grad(grads, *x, gx);
            }
        }
        Ok(())
    }
}

#[inline]
fn broadcast_get<T: Copy>(b: &Dense<T>, bc: Broadcast, i: usize, j: usize) -> T {
    match bc {
        Broadcast::Same => b[(i, j)],
        Broadcast::Row => b[(0, j)],
        Broadcast::Col => b[(i, 0)],
        Broadcast::Scalar => b[(0, 0)],
    }
}

#[inline]
fn broadcast_get_mut<T>(b: &mut Dense<T>, bc: Broadcast, i: usize, j: usize) -> &mut T {
    match bc {
        Broadcast::Same => &mut b[(i, j)],
        Broadcast::Row => &mut b[(0, j)],
        Broadcast::Col => &mut b[(i, 0)],
        Broadcast::Scalar => &mut b[(0, 0)],
    }
}

fn accumulate<T: Scalar>(acc: &mut Dense<T>, g: &Dense<T>) {
    for (a, &v) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *a += v;
    }
}

fn add_grad<T: Scalar>(grads: &mut [Option<Dense<T>>], v: Var, g: Dense<T>) {
    match &mut grads[v.0] {
        Some(acc) => accumulate(acc, &g),
        slot @ None => *slot = Some(g),
    }
}
