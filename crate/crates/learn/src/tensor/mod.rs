//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records primitive applications eagerly; [`Tape::backward`]
//! replays them in reverse, accumulating exact vector-Jacobian products.
//! Nodes are append-only so the tape is topologically ordered by
//! construction, and the backward pass visits each node exactly once.
//! No primitive mutates its inputs, and identical tapes produce bitwise
//! identical gradients. A tape lives on one thread and is discarded after
//! use; tensors without tapes are plain [`Matrix`] values.

mod matrix;

pub use matrix::Matrix;

use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: got {got}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        got: String,
        expected: String,
    },
    #[error("backward requires a scalar output, got {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("tensor id {0} does not belong to this tape")]
    UnknownTensor(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    BroadcastAddRow(TensorId, TensorId),
    Scale(TensorId, f64),
    AddScalar(TensorId),
    Relu(TensorId),
    Elu(TensorId, f64),
    Tanh(TensorId),
    Sigmoid(TensorId),
    Exp(TensorId),
    Log(TensorId),
    Square(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    ConcatCols(Vec<TensorId>),
    SliceCols(TensorId, usize, usize),
    GatherRows(TensorId, Rc<Vec<usize>>),
    ScatterRows {
        src: TensorId,
        dst_index: Rc<Vec<usize>>,
        reduce: Reduce,
        counts: Rc<Vec<f64>>,
        argmax: Rc<Vec<Option<usize>>>,
    },
    LogSumExpTau(TensorId, f64),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, materializing zeros of the given shape if the
    /// output did not depend on it.
    pub fn get_or_zeros(&self, id: TensorId, rows: usize, cols: usize) -> Matrix {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(rows, cols))
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

    pub fn value(&self, id: TensorId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op) -> TensorId {
        self.nodes.push(Node { value, op });
        TensorId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> TensorId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.leaf(Matrix::scalar(v))
    }

    fn expect_same_shape(
        &self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
    ) -> Result<(), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                got: format!("{sb:?}"),
                expected: format!("{sa:?}"),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                got: format!("({br}, {bc})"),
                expected: format!("({ac}, _)"),
            });
        }
        let value = self.value(a).matmul(self.value(b));
        debug_assert_eq!(value.shape(), (ar, bc));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.expect_same_shape("add", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.expect_same_shape("sub", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.expect_same_shape("mul", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// (m x n) + (1 x n) broadcast over rows.
    pub fn broadcast_add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId, TensorError> {
        let (_, ac) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != ac {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_add_row",
                got: format!("({rr}, {rc})"),
                expected: format!("(1, {ac})"),
            });
        }
        let rv = self.value(row).data().to_vec();
        let base = self.value(a);
        let mut value = base.clone();
        for i in 0..value.rows() {
            for (o, &r) in value.row_mut(i).iter_mut().zip(&rv) {
                *o += r;
            }
        }
        Ok(self.push(value, Op::BroadcastAddRow(a, row)))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn elu(&mut self, a: TensorId, alpha: f64) -> TensorId {
        let value = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { alpha * (x.exp() - 1.0) });
        self.push(value, Op::Elu(a, alpha))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn square(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a))
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Matrix::scalar(total), Op::Sum(a))
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let data = self.value(a).data();
        let total: f64 = data.iter().sum();
        let value = Matrix::scalar(total / data.len().max(1) as f64);
        self.push(value, Op::Mean(a))
    }

    /// Horizontal concatenation; all inputs share the row count.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    got: format!("({r}, {c})"),
                    expected: format!("({rows}, _)"),
                });
            }
            cols += c;
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pm = self.value(p).clone();
            for i in 0..rows {
                value.row_mut(i)[offset..offset + pm.cols()].copy_from_slice(pm.row(i));
            }
            offset += pm.cols();
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(
        &mut self,
        a: TensorId,
        start: usize,
        len: usize,
    ) -> Result<TensorId, TensorError> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                got: format!("start {start} + len {len}"),
                expected: format!("<= {cols} columns"),
            });
        }
        let src = self.value(a);
        let mut value = Matrix::zeros(rows, len);
        for i in 0..rows {
            value
                .row_mut(i)
                .copy_from_slice(&src.row(i)[start..start + len]);
        }
        Ok(self.push(value, Op::SliceCols(a, start, len)))
    }

    /// Rows of `a` at the given indices, in index order.
    pub fn gather_rows(
        &mut self,
        a: TensorId,
        indices: Rc<Vec<usize>>,
    ) -> Result<TensorId, TensorError> {
        let (rows, cols) = self.shape(a);
        if indices.iter().any(|&i| i >= rows) {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                got: "index out of range".into(),
                expected: format!("< {rows} rows"),
            });
        }
        let src = self.value(a);
        let mut value = Matrix::zeros(indices.len(), cols);
        for (out_row, &i) in indices.iter().enumerate() {
            value.row_mut(out_row).copy_from_slice(src.row(i));
        }
        Ok(self.push(value, Op::GatherRows(a, indices)))
    }

    /// Reduce rows of `src` into `out_rows` buckets given by `dst_index`.
    /// Empty buckets stay zero. Max reduction routes gradient to the first
    /// (lowest source row) argmax contributor per output entry's row.
    pub fn scatter_rows(
        &mut self,
        src: TensorId,
        dst_index: Rc<Vec<usize>>,
        out_rows: usize,
        reduce: Reduce,
    ) -> Result<TensorId, TensorError> {
        let (rows, cols) = self.shape(src);
        if dst_index.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_rows",
                got: format!("{} indices", dst_index.len()),
                expected: format!("{rows} source rows"),
            });
        }
        if dst_index.iter().any(|&d| d >= out_rows) {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_rows",
                got: "destination out of range".into(),
                expected: format!("< {out_rows} rows"),
            });
        }
        let srcm = self.value(src);
        let mut value = Matrix::zeros(out_rows, cols);
        let mut counts = vec![0.0f64; out_rows];
        match reduce {
            Reduce::Sum | Reduce::Mean => {
                for (r, &d) in dst_index.iter().enumerate() {
                    counts[d] += 1.0;
                    let row = srcm.row(r);
                    for (o, &v) in value.row_mut(d).iter_mut().zip(row) {
                        *o += v;
                    }
                }
                if reduce == Reduce::Mean {
                    for d in 0..out_rows {
                        if counts[d] > 0.0 {
                            let inv = 1.0 / counts[d];
                            for o in value.row_mut(d) {
                                *o *= inv;
                            }
                        }
                    }
                }
            }
            Reduce::Max => {
                // Per-column max; the lowest contributing source row wins
                // ties so the gradient routing is deterministic.
                let mut winner: Vec<Vec<Option<usize>>> = vec![vec![None; cols]; out_rows];
                for (r, &d) in dst_index.iter().enumerate() {
                    counts[d] += 1.0;
                    let row = srcm.row(r);
                    for (c, &v) in row.iter().enumerate() {
                        let cur = value.get(d, c);
                        if winner[d][c].is_none() || v > cur {
                            value.set(d, c, v);
                            winner[d][c] = Some(r);
                        }
                    }
                }
                // Flatten per-column winners: store at finest granularity by
                // packing into argmax via a side table on the op.
                return Ok(self.push(
                    value,
                    Op::ScatterRows {
                        src,
                        dst_index,
                        reduce,
                        counts: Rc::new(counts),
                        argmax: Rc::new(
                            winner
                                .into_iter()
                                .flatten()
                                .collect::<Vec<Option<usize>>>(),
                        ),
                    },
                ));
            }
        }
        Ok(self.push(
            value,
            Op::ScatterRows {
                src,
                dst_index,
                reduce,
                counts: Rc::new(counts),
                argmax: Rc::new(Vec::new()),
            },
        ))
    }

    /// Temperature log-sum-exp over a column vector: (1/tau) ln sum exp(tau x).
    pub fn logsumexp_tau(&mut self, a: TensorId, tau: f64) -> Result<TensorId, TensorError> {
        let (_, cols) = self.shape(a);
        if cols != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "logsumexp_tau",
                got: format!("({}, {cols})", self.shape(a).0),
                expected: "(_, 1)".into(),
            });
        }
        let xs = self.value(a).data();
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = xs.iter().map(|&x| (tau * (x - max)).exp()).sum();
        let value = Matrix::scalar(max + z.ln() / tau);
        Ok(self.push(value, Op::LogSumExpTau(a, tau)))
    }

    /// Reverse pass from a scalar output. Returns per-node gradients.
    pub fn backward(&self, output: TensorId) -> Result<Gradients, TensorError> {
        if output.0 >= self.nodes.len() {
            return Err(TensorError::UnknownTensor(output.0));
        }
        let out_val = &self.nodes[output.0].value;
        if !out_val.is_scalar() {
            return Err(TensorError::NonScalarOutput {
                rows: out_val.rows(),
                cols: out_val.cols(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(self.value(*b));
                    let gb = self.value(*a).matmul_tn(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    let mut neg = g;
                    neg.scale_assign(-1.0);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip(self.value(*b), |x, y| x * y);
                    let gb = g.zip(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::BroadcastAddRow(a, row) => {
                    let cols = g.cols();
                    let mut row_grad = Matrix::zeros(1, cols);
                    for i in 0..g.rows() {
                        for (o, &v) in row_grad.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *row, row_grad);
                }
                Op::Scale(a, c) => {
                    let mut ga = g;
                    ga.scale_assign(*c);
                    accumulate(&mut grads, *a, ga);
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let ga = g.zip(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Elu(a, alpha) => {
                    let ga = g.zip(self.value(*a), |gv, x| {
                        if x > 0.0 {
                            gv
                        } else {
                            gv * alpha * x.exp()
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip(&node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip(&node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip(&node.value, |gv, y| gv * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let ga = g.zip(self.value(*a), |gv, x| gv / x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let ga = g.zip(self.value(*a), |gv, x| gv * 2.0 * x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let gv = g.scalar_value();
                    let (r, c) = self.shape(*a);
                    accumulate(&mut grads, *a, Matrix::from_vec(r, c, vec![gv; r * c]));
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape(*a);
                    let gv = g.scalar_value() / (r * c).max(1) as f64;
                    accumulate(&mut grads, *a, Matrix::from_vec(r, c, vec![gv; r * c]));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = self.shape(p);
                        let mut gp = Matrix::zeros(pr, pc);
                        for i in 0..pr {
                            gp.row_mut(i)
                                .copy_from_slice(&g.row(i)[offset..offset + pc]);
                        }
                        accumulate(&mut grads, p, gp);
                        offset += pc;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let (ar, ac) = self.shape(*a);
                    let mut ga = Matrix::zeros(ar, ac);
                    for i in 0..ar {
                        ga.row_mut(i)[*start..start + len].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::GatherRows(a, indices) => {
                    let (ar, ac) = self.shape(*a);
                    let mut ga = Matrix::zeros(ar, ac);
                    for (out_row, &i) in indices.iter().enumerate() {
                        for (o, &v) in ga.row_mut(i).iter_mut().zip(g.row(out_row)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ScatterRows {
                    src,
                    dst_index,
                    reduce,
                    counts,
                    argmax,
                } => {
                    let (sr, sc) = self.shape(*src);
                    let mut gs = Matrix::zeros(sr, sc);
                    match reduce {
                        Reduce::Sum => {
                            for (r, &d) in dst_index.iter().enumerate() {
                                gs.row_mut(r).copy_from_slice(g.row(d));
                            }
                        }
                        Reduce::Mean => {
                            for (r, &d) in dst_index.iter().enumerate() {
                                let inv = 1.0 / counts[d];
                                for (o, &v) in gs.row_mut(r).iter_mut().zip(g.row(d)) {
                                    *o = v * inv;
                                }
                            }
                        }
                        Reduce::Max => {
                            // argmax is flattened (out_rows x cols).
                            for (r, &d) in dst_index.iter().enumerate() {
                                for c in 0..sc {
                                    if argmax[d * sc + c] == Some(r) {
                                        gs.set(r, c, g.get(d, c));
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *src, gs);
                }
                Op::LogSumExpTau(a, tau) => {
                    let xs = self.value(*a).data();
                    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = xs.iter().map(|&x| (tau * (x - max)).exp()).sum();
                    let gv = g.scalar_value();
                    let data: Vec<f64> = xs
                        .iter()
                        .map(|&x| gv * (tau * (x - max)).exp() / z)
                        .collect();
                    accumulate(&mut grads, *a, Matrix::from_vec(xs.len(), 1, data));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: TensorId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Max relative error between analytic and central-difference gradients of a
/// recorded scalar function: |analytic - cd| / (|analytic| + |cd| + 1e-12),
/// maximized over every parameter entry. The function must be smooth at the
/// evaluation point (jitter inputs away from ReLU kinks before calling).
pub fn gradient_check<F>(f: F, params: &[Matrix], eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId, TensorError>,
{
    let eval = |points: &[Matrix]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = points.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &ids)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(TensorError::NonScalarOutput {
                rows: v.rows(),
                cols: v.cols(),
            });
        }
        Ok(v.scalar_value())
    };

    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &ids)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[pi], param.rows(), param.cols());
        for k in 0..param.data().len() {
            let orig = param.data()[k];
            probe[pi].data_mut()[k] = orig + eps;
            let up = eval(&probe)?;
            probe[pi].data_mut()[k] = orig - eps;
            let down = eval(&probe)?;
            probe[pi].data_mut()[k] = orig;
            let cd = (up - down) / (2.0 * eps);
            let a = analytic.data()[k];
            let rel = (a - cd).abs() / (a.abs() + cd.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
