use super::scalar::matmul_into;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    AddScalar(Var),
    Scale(Var, T),
    Max(Var, Var),
    Min(Var, Var),
    MaxScalar(Var, T),
    MinScalar(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize, usize),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Linear record of primitive operations for reverse-mode differentiation.
///
/// Values are computed eagerly when an operation is recorded; [`Tape::backward`]
/// replays the record in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    kink_margin: f64,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn softmax_rows<T: Scalar>(x: &Tensor<T>, log: bool) -> Tensor<T> {
    let cols = x.cols();
    let mut out = x.clone();
    if cols == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for v in row.iter() {
            total = total + (*v - max).exp();
        }
        if log {
            let lse = max + total.ln();
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        } else {
            for v in row.iter_mut() {
                *v = (*v - max).exp() / total;
            }
        }
    }
    out
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            kink_margin: f64::INFINITY,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Enables or disables the per-op NaN/Inf check (on by default in debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest nonzero `|a - b|` seen by any max/min op so far.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownVar(v.0))
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a differentiable input.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Records a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(op, x, y));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        if x.shape().len() != 2 || y.shape().len() != 2 || x.shape()[1] != y.shape()[0] {
            return Err(shape_err("matmul", x, y));
        }
        let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let mut out = Tensor::zeros(vec![m, n]);
        matmul_into(x.data(), m, k, false, y.data(), k, n, false, out.data_mut(), false);
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `[1, cols]` row to every row of `x` (bias addition).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check(x)?;
        self.check(row)?;
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.numel() != xv.cols() || rv.rows() != 1 {
            return Err(shape_err("add_row", xv, rv));
        }
        let mut out = xv.clone();
        let cols = xv.cols();
        if cols > 0 {
            for r in out.data_mut().chunks_mut(cols) {
                for (o, &b) in r.iter_mut().zip(rv.data()) {
                    *o = *o + b;
                }
            }
        }
        self.push("add_row", out, Op::AddRow(x, row), &[x, row])
    }

    /// Multiplies row `i` of `x` by `scale[i]`; `scale` is a `[rows, 1]` column.
    pub fn scale_rows(&mut self, x: Var, scale: Var) -> Result<Var> {
        self.check(x)?;
        self.check(scale)?;
        let (xv, sv) = (self.value(x), self.value(scale));
        if sv.cols() != 1 || sv.numel() != xv.rows() || sv.shape().len() != 2 {
            return Err(shape_err("scale_rows", xv, sv));
        }
        let mut out = xv.clone();
        let cols = xv.cols();
        if cols > 0 {
            for (r, &s) in out.data_mut().chunks_mut(cols).zip(sv.data()) {
                for o in r.iter_mut() {
                    *o = *o * s;
                }
            }
        }
        self.push("scale_rows", out, Op::ScaleRows(x, scale), &[x, scale])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| v + c);
        self.push("add_scalar", out, Op::AddScalar(x), &[x])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| v * c);
        self.push("scale", out, Op::Scale(x, c), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -T::one())
    }

    /// Exact ties are skipped: at generic inputs they only arise between
    /// operands pinned to a constant by an earlier saturated max/min.
    fn note_kinks(&mut self, a: &Tensor<T>, b: Option<&Tensor<T>>, c: T) {
        let gap = |x: T, y: T| {
            let d = (x - y).abs().f64();
            if d == 0.0 { f64::INFINITY } else { d }
        };
        let margin = match b {
            Some(b) => a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| gap(x, y))
                .fold(f64::INFINITY, f64::min),
            None => a.data().iter().map(|&x| gap(x, c)).fold(f64::INFINITY, f64::min),
        };
        self.kink_margin = self.kink_margin.min(margin);
    }

    /// Elementwise maximum; ties select `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("maximum", a, b)?;
        let (x, y) = (self.value(a).clone(), self.value(b));
        let out = x.zip_map(y, |p, q| if p >= q { p } else { q });
        let y = y.clone();
        self.note_kinks(&x, Some(&y), T::zero());
        self.push("maximum", out, Op::Max(a, b), &[a, b])
    }

    /// Elementwise minimum; ties select `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("minimum", a, b)?;
        let (x, y) = (self.value(a).clone(), self.value(b));
        let out = x.zip_map(y, |p, q| if p <= q { p } else { q });
        let y = y.clone();
        self.note_kinks(&x, Some(&y), T::zero());
        self.push("minimum", out, Op::Min(a, b), &[a, b])
    }

    /// `max(x, c)`; ties select `x`.
    pub fn max_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x).clone();
        let out = xv.map(|v| if v >= c { v } else { c });
        self.note_kinks(&xv, None, c);
        self.push("max_scalar", out, Op::MaxScalar(x, c), &[x])
    }

    /// `min(x, c)`; ties select `x`.
    pub fn min_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x).clone();
        let out = xv.map(|v| if v <= c { v } else { c });
        self.note_kinks(&xv, None, c);
        self.push("min_scalar", out, Op::MinScalar(x, c), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.max_scalar(x, T::zero())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| v.tanh());
        self.push("tanh", out, Op::Tanh(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| v.ln());
        self.push("log", out, Op::Log(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| v.exp());
        self.push("exp", out, Op::Exp(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = softmax_rows(self.value(x), false);
        self.push("softmax", out, Op::Softmax(x), &[x])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = softmax_rows(self.value(x), true);
        self.push("log_softmax", out, Op::LogSoftmax(x), &[x])
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape {
                op: "concat",
                lhs: vec![],
                rhs: vec![],
            });
        };
        for &p in parts {
            self.check(p)?;
        }
        let rows = self.value(first).rows();
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows || v.shape().len() != 2 {
                return Err(shape_err("concat", self.value(first), v));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        self.push("concat", out, Op::Concat(parts.to_vec()), parts)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        if start > end || end > xv.cols() || xv.shape().len() != 2 {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..end]);
        }
        let out = Tensor::new(vec![rows, end - start], data)?;
        self.push("slice_cols", out, Op::SliceCols(x, start, end), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let n = T::of(v.numel().max(1) as f64);
        let s: T = v.data().iter().copied().sum();
        self.push("mean", Tensor::scalar(s / n), Op::Mean(x), &[x])
    }

    /// Row sums: `[rows, cols] -> [rows, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let rows = v.rows();
        let data: Vec<T> = (0..rows).map(|r| v.row(r).iter().copied().sum()).collect();
        let out = Tensor::new(vec![rows, 1], data)?;
        self.push("sum_cols", out, Op::SumCols(x), &[x])
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, delta: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    let mut da = Tensor::zeros(vec![m, k]);
                    matmul_into(g.data(), m, n, false, bv.data(), k, n, true, da.data_mut(), false);
                    acc(*a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = Tensor::zeros(vec![k, n]);
                    matmul_into(av.data(), m, k, true, g.data(), m, n, false, db.data_mut(), false);
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                let rv = self.value(*row);
                let cols = g.cols();
                let mut db = vec![T::zero(); cols];
                if cols > 0 {
                    for r in g.data().chunks(cols) {
                        for (d, &v) in db.iter_mut().zip(r) {
                            *d = *d + v;
                        }
                    }
                }
                acc(*row, Tensor::new(rv.shape().to_vec(), db).expect("bias shape"));
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let cols = g.cols();
                if self.nodes[x.0].requires_grad {
                    let mut dx = g.clone();
                    if cols > 0 {
                        for (r, &sc) in dx.data_mut().chunks_mut(cols).zip(sv.data()) {
                            for v in r.iter_mut() {
                                *v = *v * sc;
                            }
                        }
                    }
                    acc(*x, dx);
                }
                if self.nodes[s.0].requires_grad {
                    let rows = g.rows();
                    let ds: Vec<T> = (0..rows)
                        .map(|r| g.row(r).iter().zip(xv.row(r)).map(|(&a, &b)| a * b).sum())
                        .collect();
                    acc(*s, Tensor::new(sv.shape().to_vec(), ds).expect("scale shape"));
                }
            }
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::Scale(x, c) => {
                let c = *c;
                acc(*x, g.map(|v| v * c));
            }
            Op::Max(a, b) | Op::Min(a, b) => {
                let is_max = matches!(node.op, Op::Max(..));
                let (av, bv) = (self.value(*a), self.value(*b));
                let pick_a: Vec<bool> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&p, &q)| if is_max { p >= q } else { p <= q })
                    .collect();
                let mut da = g.clone();
                let mut db = g.clone();
                for ((x, y), &sel) in da.data_mut().iter_mut().zip(db.data_mut()).zip(&pick_a) {
                    if sel {
                        *y = T::zero();
                    } else {
                        *x = T::zero();
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::MaxScalar(x, c) | Op::MinScalar(x, c) => {
                let is_max = matches!(node.op, Op::MaxScalar(..));
                let c = *c;
                let dx = g.zip_map(self.value(*x), |gv, xv| {
                    let sel = if is_max { xv >= c } else { xv <= c };
                    if sel {
                        gv
                    } else {
                        T::zero()
                    }
                });
                acc(*x, dx);
            }
            Op::Sigmoid(x) => acc(*x, g.zip_map(out, |gv, y| gv * y * (T::one() - y))),
            Op::Tanh(x) => acc(*x, g.zip_map(out, |gv, y| gv * (T::one() - y * y))),
            Op::Log(x) => acc(*x, g.zip_map(self.value(*x), |gv, xv| gv / xv)),
            Op::Exp(x) => acc(*x, g.zip_map(out, |gv, y| gv * y)),
            Op::Softmax(x) => {
                let cols = g.cols();
                let mut dx = g.clone();
                if cols > 0 {
                    for ((d, gr), y) in dx
                        .data_mut()
                        .chunks_mut(cols)
                        .zip(g.data().chunks(cols))
                        .zip(out.data().chunks(cols))
                    {
                        let dot: T = gr.iter().zip(y).map(|(&a, &b)| a * b).sum();
                        for ((dv, &gv), &yv) in d.iter_mut().zip(gr).zip(y) {
                            *dv = yv * (gv - dot);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::LogSoftmax(x) => {
                let cols = g.cols();
                let mut dx = g.clone();
                if cols > 0 {
                    for ((d, gr), y) in dx
                        .data_mut()
                        .chunks_mut(cols)
                        .zip(g.data().chunks(cols))
                        .zip(out.data().chunks(cols))
                    {
                        let total: T = gr.iter().copied().sum();
                        for ((dv, &gv), &yv) in d.iter_mut().zip(gr).zip(y) {
                            *dv = gv - yv.exp() * total;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.nodes[p.0].requires_grad {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        acc(p, Tensor::new(vec![rows, w], data).expect("concat part"));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(x, start, end) => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.shape().to_vec());
                let cols = xv.cols();
                let w = end - start;
                if w > 0 {
                    for (r, gr) in g.data().chunks(w).enumerate() {
                        dx.data_mut()[r * cols + start..r * cols + end].copy_from_slice(gr);
                    }
                }
                acc(*x, dx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                acc(*x, Tensor::full(xv.shape().to_vec(), g.item()));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let n = T::of(xv.numel().max(1) as f64);
                acc(*x, Tensor::full(xv.shape().to_vec(), g.item() / n));
            }
            Op::SumCols(x) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut dx = Tensor::zeros(xv.shape().to_vec());
                if cols > 0 {
                    for (r, &gv) in dx.data_mut().chunks_mut(cols).zip(g.data()) {
                        r.iter_mut().for_each(|v| *v = gv);
                    }
                }
                acc(*x, dx);
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`, if any path from `v` reached the loss.
    pub fn get_ref(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get_ref(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v).to_vec()))
    }
}
