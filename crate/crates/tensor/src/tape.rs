//! Wengert tape: every forward op appends a record holding its output value
//! and input ids; `backward` replays the records in reverse.
//!
//! Records are appended in execution order, so inputs always precede their
//! consumers and a single reverse sweep visits each record exactly once.

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Layout, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Prelu(Var, Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    SqNormRows(Var),
    NormRows(Var),
    Scale(Var, f64),
    AddScalar(Var),
    LogSoftmaxRows(Var),
    NormalizeRows(Var, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "hadamard",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSums(_) => "row_sums",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Prelu(..) => "prelu",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Square(_) => "square",
            Op::SqNormRows(_) => "sq_norm_rows",
            Op::NormRows(_) => "norm_rows",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::LogSoftmaxRows(_) => "log_softmax_rows",
            Op::NormalizeRows(..) => "normalize_rows",
        }
    }
}

#[derive(Clone, Debug)]
struct Record {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Per-record gradients produced by [`Tape::gradients`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// influence the loss (or carries no gradient, like constants).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
    bound: Vec<Option<Var>>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded ops.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.records[v.0].value.shape()
    }

    fn push_raw(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.records.push(Record {
            op,
            value,
            needs_grad,
        });
        Var(self.records.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let needs_grad = inputs.iter().any(|v| self.records[v.0].needs_grad);
        Ok(self.push_raw(op, value, needs_grad))
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(Op::Constant, t, false)
    }

    /// A leaf whose gradient is tracked (retrievable via [`Tape::gradients`]).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push_raw(Op::Input, t, true)
    }

    /// Bind a stored parameter. Binding the same id twice returns the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.bound.get(id.0) {
            return *v;
        }
        let v = self.push_raw(Op::Param(id), store.value(id).clone(), true);
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        self.bound[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), out, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let out = ta.zip_map(tb, |x, y| x + y);
        self.push(Op::Add(a, b), out, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let out = ta.zip_map(tb, |x, y| x - y);
        self.push(Op::Sub(a, b), out, &[a, b])
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("hadamard", ta, tb)?;
        let out = ta.zip_map(tb, |x, y| x * y);
        self.push(Op::Mul(a, b), out, &[a, b])
    }

    fn row_operand(&self, op: &'static str, a: Var, r: Var) -> Result<(usize, usize)> {
        let (rows, cols) = self.value(a).expect_2d(op)?;
        if self.value(r).len() != cols {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(r).to_vec(),
            });
        }
        Ok((rows, cols))
    }

    /// `a[i, j] + row[j]` for a 2-d `a` and a row of matching width (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, cols) = self.row_operand("add_row", a, row)?;
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(cols) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        self.push(Op::AddRow(a, row), out, &[a, row])
    }

    /// `a[i, j] * row[j]`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, cols) = self.row_operand("mul_row", a, row)?;
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(cols) {
            for (o, g) in chunk.iter_mut().zip(&r) {
                *o *= g;
            }
        }
        self.push(Op::MulRow(a, row), out, &[a, row])
    }

    /// Concatenate 2-d tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Invalid("concat of zero tensors".into()));
        }
        if axis > 1 {
            return Err(TensorError::OutOfRange {
                what: "concat axis",
                index: axis,
                extent: 2,
            });
        }
        let (r0, c0) = self.value(parts[0]).expect_2d("concat")?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).expect_2d("concat")?;
            let (keep, grow) = if axis == 0 { ((c, c0), r) } else { ((r, r0), c) };
            if keep.0 != keep.1 {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            total += grow;
        }
        let out = if axis == 0 {
            let mut data = Vec::with_capacity(total * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::new(vec![total, c0], data)?
        } else {
            let mut data = Vec::with_capacity(r0 * total);
            for i in 0..r0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(i));
                }
            }
            Tensor::new(vec![r0, total], data)?
        };
        self.push(Op::Concat(parts.to_vec(), axis), out, parts)
    }

    /// Contiguous range `start..start+len` along `axis` of a 2-d tensor.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).expect_2d("slice")?;
        let extent = match axis {
            0 => r,
            1 => c,
            _ => {
                return Err(TensorError::OutOfRange {
                    what: "slice axis",
                    index: axis,
                    extent: 2,
                })
            }
        };
        if start + len > extent {
            return Err(TensorError::OutOfRange {
                what: "slice end",
                index: start + len,
                extent,
            });
        }
        let t = self.value(x);
        let out = if axis == 0 {
            Tensor::new(vec![len, c], t.data()[start * c..(start + len) * c].to_vec())?
        } else {
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&t.row_slice(i)[start..start + len]);
            }
            Tensor::new(vec![r, len], data)?
        };
        self.push(Op::Slice { x, axis, start }, out, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Op::Sum(x), Tensor::scalar(s), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(TensorError::Invalid("mean of an empty tensor".into()));
        }
        let m = t.sum() / t.len() as f64;
        self.push(Op::Mean(x), Tensor::scalar(m), &[x])
    }

    /// Per-row sums of a 2-d tensor, shaped `rows × 1`.
    pub fn row_sums(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, _) = t.expect_2d("row_sums")?;
        let data = (0..r).map(|i| t.row_slice(i).iter().sum()).collect();
        let out = Tensor::new(vec![r, 1], data)?;
        self.push(Op::RowSums(x), out, &[x])
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(x).map(f);
        self.push(op, out, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Ln(x), f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    /// Parametric ReLU with a single learned slope (one-element tensor).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if !self.value(slope).is_scalar() {
            return Err(TensorError::ShapeMismatch {
                op: "prelu",
                lhs: vec![1],
                rhs: self.shape(slope).to_vec(),
            });
        }
        let a = self.value(slope).item();
        let out = self.value(x).map(|v| if v >= 0.0 { v } else { a * v });
        self.push(Op::Prelu(x, slope), out, &[x, slope])
    }

    /// Squared Euclidean norm of each row, shaped `rows × 1`.
    pub fn sq_norm_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, _) = t.expect_2d("sq_norm_rows")?;
        let data = (0..r)
            .map(|i| t.row_slice(i).iter().map(|v| v * v).sum())
            .collect();
        let out = Tensor::new(vec![r, 1], data)?;
        self.push(Op::SqNormRows(x), out, &[x])
    }

    /// Euclidean norm of each row, shaped `rows × 1`. The gradient at a zero
    /// row is taken as zero.
    pub fn norm_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, _) = t.expect_2d("norm_rows")?;
        let data = (0..r)
            .map(|i| t.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::new(vec![r, 1], data)?;
        self.push(Op::NormRows(x), out, &[x])
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.expect_2d("log_softmax_rows")?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = t.row_slice(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|v| v - lse));
        }
        let out = Tensor::new(vec![r, c], data)?;
        self.push(Op::LogSoftmaxRows(x), out, &[x])
    }

    /// Standardize each row to zero mean and unit variance:
    /// `(x - mean) / sqrt(var + eps)`.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.expect_2d("normalize_rows")?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = t.row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            data.extend(row.iter().map(|v| (v - mean) * inv));
        }
        let out = Tensor::new(vec![r, c], data)?;
        self.push(Op::NormalizeRows(x, eps), out, &[x])
    }

    /// Gradients of a scalar `loss` with respect to every record on the tape.
    pub fn gradients(&self, loss: Var) -> Result<Grads> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(lt.shape().to_vec(), vec![1.0])?);
        for idx in (0..=loss.0).rev() {
            let rec = &self.records[idx];
            if !rec.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(rec, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    /// Accumulate d(loss)/d(param) into every bound parameter's gradient.
    /// Parameters the loss does not reach are left untouched.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (idx, rec) in self.records.iter().enumerate().take(loss.0 + 1) {
            if let (Op::Param(pid), Some(g)) = (&rec.op, grads.grads[idx].as_ref()) {
                store.get_mut(*pid).grad.add_assign(g);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.records[v.0].needs_grad
    }

    fn backprop(&self, rec: &Record, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &rec.value;
        match &rec.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.wants(*a) {
                    let slot = slot(grads, *a, ta.shape());
                    // dA = dC · Bᵀ
                    gemm(m, n, k, g.data(), Layout::Normal, tb.data(), Layout::Transposed, slot.data_mut(), 1.0);
                }
                if self.wants(*b) {
                    let slot = slot(grads, *b, tb.shape());
                    // dB = Aᵀ · dC
                    gemm(k, m, n, ta.data(), Layout::Transposed, g.data(), Layout::Normal, slot.data_mut(), 1.0);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g);
                self.acc(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g);
                if self.wants(*b) {
                    self.acc(grads, *b, &g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, &g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    self.acc(grads, *b, &g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g);
                if self.wants(*row) {
                    let shape = self.shape(*row).to_vec();
                    let cols = g.cols();
                    let slot = slot(grads, *row, &shape);
                    for chunk in g.data().chunks(cols) {
                        for (s, v) in slot.data_mut().iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let r = self.value(*row).data();
                let cols = g.cols();
                if self.wants(*a) {
                    let mut ga = g.clone();
                    for chunk in ga.data_mut().chunks_mut(cols) {
                        for (v, s) in chunk.iter_mut().zip(r) {
                            *v *= s;
                        }
                    }
                    self.acc(grads, *a, &ga);
                }
                if self.wants(*row) {
                    let ta = self.value(*a);
                    let shape = self.shape(*row).to_vec();
                    let slot = slot(grads, *row, &shape);
                    for (gc, ac) in g.data().chunks(cols).zip(ta.data().chunks(cols)) {
                        for ((s, gv), av) in slot.data_mut().iter_mut().zip(gc).zip(ac) {
                            *s += gv * av;
                        }
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                let total_cols = g.cols();
                for &p in parts {
                    let shape = self.shape(p).to_vec();
                    let (r, c) = (shape[0], shape[1]);
                    if self.wants(p) {
                        let slot = slot(grads, p, &shape);
                        if *axis == 0 {
                            let src = &g.data()[offset * c..(offset + r) * c];
                            for (s, v) in slot.data_mut().iter_mut().zip(src) {
                                *s += v;
                            }
                        } else {
                            for i in 0..r {
                                let src = &g.data()[i * total_cols + offset..i * total_cols + offset + c];
                                for (s, v) in slot.data_mut()[i * c..(i + 1) * c].iter_mut().zip(src) {
                                    *s += v;
                                }
                            }
                        }
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::Slice { x, axis, start } => {
                if !self.wants(*x) {
                    return;
                }
                let shape = self.shape(*x).to_vec();
                let c = shape[1];
                let slot = slot(grads, *x, &shape);
                if *axis == 0 {
                    for (s, v) in slot.data_mut()[start * c..].iter_mut().zip(g.data()) {
                        *s += v;
                    }
                } else {
                    let len = g.cols();
                    for i in 0..g.rows() {
                        let dst = &mut slot.data_mut()[i * c + start..i * c + start + len];
                        for (s, v) in dst.iter_mut().zip(g.row_slice(i)) {
                            *s += v;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let t = Tensor::full(self.shape(*x), g.item());
                self.acc(grads, *x, &t);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let t = Tensor::full(self.shape(*x), g.item() / n);
                self.acc(grads, *x, &t);
            }
            Op::RowSums(x) => {
                let shape = self.shape(*x).to_vec();
                let mut t = Tensor::zeros(&shape);
                let c = shape[1];
                for (i, chunk) in t.data_mut().chunks_mut(c).enumerate() {
                    chunk.fill(g.data()[i]);
                }
                self.acc(grads, *x, &t);
            }
            Op::Tanh(x) => self.acc(grads, *x, &g.zip_map(out, |gv, y| gv * (1.0 - y * y))),
            Op::Sigmoid(x) => self.acc(grads, *x, &g.zip_map(out, |gv, y| gv * y * (1.0 - y))),
            Op::Relu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                self.acc(grads, *x, &gx);
            }
            Op::Prelu(x, slope) => {
                let a = self.value(*slope).item();
                let tx = self.value(*x);
                if self.wants(*x) {
                    self.acc(grads, *x, &g.zip_map(tx, |gv, xv| if xv >= 0.0 { gv } else { a * gv }));
                }
                if self.wants(*slope) {
                    let ds: f64 = g
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(gv, xv)| if *xv >= 0.0 { 0.0 } else { gv * xv })
                        .sum();
                    let shape = self.shape(*slope).to_vec();
                    let s = slot(grads, *slope, &shape);
                    s.data_mut()[0] += ds;
                }
            }
            Op::Softplus(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| gv * sigmoid(xv));
                self.acc(grads, *x, &gx);
            }
            Op::Exp(x) => self.acc(grads, *x, &g.zip_map(out, |gv, y| gv * y)),
            Op::Ln(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| gv / xv);
                self.acc(grads, *x, &gx);
            }
            Op::Square(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| 2.0 * gv * xv);
                self.acc(grads, *x, &gx);
            }
            Op::SqNormRows(x) => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut gx = tx.clone();
                for (i, chunk) in gx.data_mut().chunks_mut(c).enumerate() {
                    let gi = 2.0 * g.data()[i];
                    chunk.iter_mut().for_each(|v| *v *= gi);
                }
                self.acc(grads, *x, &gx);
            }
            Op::NormRows(x) => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut gx = tx.clone();
                for (i, chunk) in gx.data_mut().chunks_mut(c).enumerate() {
                    let n = out.data()[i];
                    let gi = if n > 0.0 { g.data()[i] / n } else { 0.0 };
                    chunk.iter_mut().for_each(|v| *v *= gi);
                }
                self.acc(grads, *x, &gx);
            }
            Op::Scale(x, s) => self.acc(grads, *x, &g.map(|v| v * s)),
            Op::AddScalar(x) => self.acc(grads, *x, g),
            Op::LogSoftmaxRows(x) => {
                // dx = g - softmax * sum(g)
                let c = out.cols();
                let mut gx = g.clone();
                for (i, chunk) in gx.data_mut().chunks_mut(c).enumerate() {
                    let gs: f64 = g.row_slice(i).iter().sum();
                    for (v, y) in chunk.iter_mut().zip(out.row_slice(i)) {
                        *v -= y.exp() * gs;
                    }
                }
                self.acc(grads, *x, &gx);
            }
            Op::NormalizeRows(x, eps) => {
                // y = (x - m) * inv, inv = 1/sqrt(var + eps)
                // dx = inv * (g - mean(g) - y * mean(g ⊙ y))
                let tx = self.value(*x);
                let c = tx.cols();
                let mut gx = Tensor::zeros(tx.shape());
                for i in 0..tx.rows() {
                    let row = tx.row_slice(i);
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gi = g.row_slice(i);
                    let yi = out.row_slice(i);
                    let gm = gi.iter().sum::<f64>() / c as f64;
                    let gym = gi.iter().zip(yi).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        gx.data_mut()[i * c + j] = inv * (gi[j] - gm - yi[j] * gym);
                    }
                }
                self.acc(grads, *x, &gx);
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: &Tensor) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}
