//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value; nodes refer to
//! inputs by index, so the tape is topologically ordered by construction.
//! [`Tape::backward`] walks the nodes in reverse, accumulating gradients
//! additively across fan-out.

use super::tensor::Tensor;
use crate::scalar::{cast, Real};
use crate::{Error, Result};

/// Handle to a tape node. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    /// Input tensor: a constant or a trainable parameter.
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    SoftmaxRows(usize),
    /// Per-column max over each row range; `argmax` remembers the winning
    /// source row for every (group, column) slot.
    MaxPoolRows {
        a: usize,
        groups: Vec<(usize, usize)>,
        argmax: Vec<usize>,
    },
    MeanAll(usize),
    SumAll(usize),
    RowSum(usize),
    ColSum(usize),
    Scale(usize, T),
    AddConst(usize, T),
    ClampConst(usize, T, T),
    PowConst(usize, T),
    /// a[i][j] / b[i][0]
    DivColVec(usize, usize),
    /// a[i][j] / b[0][j]
    DivRowVec(usize, usize),
    /// a[i][j] + b[0][j]
    AddRowVec(usize, usize),
    ConcatRows(usize, usize),
    ConcatCols(usize, usize),
    SliceRows(usize, usize, usize),
    SliceCols(usize, usize, usize),
    RepeatRows(usize, usize),
    /// Broadcast arithmetic with a 1x1 node.
    AddScalar(usize, usize),
    SubScalar(usize, usize),
    MulScalar(usize, usize),
    DivScalar(usize, usize),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Linear record of a differentiable computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; gradients do not flow into it.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Trainable input; [`Tape::grad`] is populated for it after backward.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass, if any reached this node.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Parameter(format!(
                "variable #{} does not belong to this tape",
                v.0
            )));
        }
        Ok(())
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, a: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.rg(a);
        self.push(op, value, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.rg(a) || self.rg(b);
        self.push(op, value, rg)
    }

    fn same_shape(&self, name: &str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.val(a), self.val(b));
        if x.shape() != y.shape() {
            return Err(Error::Parameter(format!(
                "{name} shape mismatch: {}x{} vs {}x{}",
                x.rows(),
                x.cols(),
                y.rows(),
                y.cols()
            )));
        }
        Ok(())
    }

    // -- elementwise and matrix ops --------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let value = self.val(a).matmul(self.val(b))?;
        Ok(self.binary(a, b, value, Op::MatMul(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape("add", a, b)?;
        let value = zip(self.val(a), self.val(b), |x, y| x + y);
        Ok(self.binary(a, b, value, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape("sub", a, b)?;
        let value = zip(self.val(a), self.val(b), |x, y| x - y);
        Ok(self.binary(a, b, value, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape("mul", a, b)?;
        let value = zip(self.val(a), self.val(b), |x, y| x * y);
        Ok(self.binary(a, b, value, Op::Mul(a.0, b.0)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.val(a).transpose();
        Ok(self.unary(a, value, Op::Transpose(a.0)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.val(a).map(|x| x.max(T::zero()));
        Ok(self.unary(a, value, Op::Relu(a.0)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.val(a).map(|x| x.exp());
        Ok(self.unary(a, value, Op::Exp(a.0)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.val(a).map(|x| x.ln());
        Ok(self.unary(a, value, Op::Log(a.0)))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.val(a).map(|x| x.sqrt());
        Ok(self.unary(a, value, Op::Sqrt(a.0)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.check(a)?;
        let value = self.val(a).map(|x| x * s);
        Ok(self.unary(a, value, Op::Scale(a.0, s)))
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Result<Var> {
        self.check(a)?;
        let value = self.val(a).map(|x| x + c);
        Ok(self.unary(a, value, Op::AddConst(a.0, c)))
    }

    /// Elementwise clamp to `[lo, hi]`. The subgradient passes through at
    /// the boundaries and is zero strictly outside.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        self.check(a)?;
        if lo > hi {
            return Err(Error::Parameter(format!("clamp: lo {lo} > hi {hi}")));
        }
        let value = self.val(a).map(|x| x.max(lo).min(hi));
        Ok(self.unary(a, value, Op::ClampConst(a.0, lo, hi)))
    }

    /// Elementwise `x^p`; callers keep `x` in the domain of `powf`.
    pub fn pow_const(&mut self, a: Var, p: T) -> Result<Var> {
        self.check(a)?;
        let value = self.val(a).map(|x| x.powf(p));
        Ok(self.unary(a, value, Op::PowConst(a.0, p)))
    }

    // -- row/softmax/pool ops --------------------------------------------

    /// Numerically stable softmax applied to every row independently.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = self.val(a);
        let (r, c) = x.shape();
        if c == 0 {
            return Err(Error::Parameter("softmax over empty rows".into()));
        }
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let row = x.row(i);
            let m = row.iter().fold(row[0], |a, &b| a.max(b));
            let mut denom = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                out.set(i, j, e);
                denom = denom + e;
            }
            for j in 0..c {
                out.set(i, j, out.get(i, j) / denom);
            }
        }
        Ok(self.unary(a, out, Op::SoftmaxRows(a.0)))
    }

    /// Column-wise max over each `[start, end)` row range; one output row
    /// per group. Ties pick the earliest row.
    pub fn max_pool_rows(&mut self, a: Var, groups: Vec<(usize, usize)>) -> Result<Var> {
        self.check(a)?;
        let x = self.val(a);
        let (r, c) = x.shape();
        if groups.is_empty() {
            return Err(Error::Parameter("max_pool_rows: no groups".into()));
        }
        for &(s, e) in &groups {
            if s >= e || e > r {
                return Err(Error::Parameter(format!(
                    "max_pool_rows: bad group [{s}, {e}) for {r} rows"
                )));
            }
        }
        let mut out = Tensor::zeros(groups.len(), c);
        let mut argmax = vec![0usize; groups.len() * c];
        for (g, &(s, e)) in groups.iter().enumerate() {
            for j in 0..c {
                let mut best = x.get(s, j);
                let mut best_row = s;
                for i in s + 1..e {
                    let v = x.get(i, j);
                    if v > best {
                        best = v;
                        best_row = i;
                    }
                }
                out.set(g, j, best);
                argmax[g * c + j] = best_row;
            }
        }
        Ok(self.unary(
            a,
            out,
            Op::MaxPoolRows {
                a: a.0,
                groups,
                argmax,
            },
        ))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = self.val(a);
        if x.is_empty() {
            return Err(Error::Parameter("mean of empty tensor".into()));
        }
        let sum = x.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let value = Tensor::scalar(sum / cast(x.len() as f64));
        Ok(self.unary(a, value, Op::MeanAll(a.0)))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let sum = self.val(a).data().iter().fold(T::zero(), |acc, &v| acc + v);
        let value = Tensor::scalar(sum);
        Ok(self.unary(a, value, Op::SumAll(a.0)))
    }

    /// Row sums as a column vector `(r, 1)`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = self.val(a);
        let (r, c) = x.shape();
        let mut out = Tensor::zeros(r, 1);
        for i in 0..r {
            let mut acc = T::zero();
            for j in 0..c {
                acc = acc + x.get(i, j);
            }
            out.set(i, 0, acc);
        }
        Ok(self.unary(a, out, Op::RowSum(a.0)))
    }

    /// Column sums as a row vector `(1, c)`.
    pub fn col_sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = self.val(a);
        let (r, c) = x.shape();
        let mut out = Tensor::zeros(1, c);
        for i in 0..r {
            for j in 0..c {
                out.set(0, j, out.get(0, j) + x.get(i, j));
            }
        }
        Ok(self.unary(a, out, Op::ColSum(a.0)))
    }

    // -- broadcast ops ----------------------------------------------------

    /// `a[i][j] / b[i][0]`.
    pub fn div_col_vec(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.val(a), self.val(b));
        if y.cols() != 1 || y.rows() != x.rows() {
            return Err(Error::Parameter(format!(
                "div_col_vec: {}x{} / {}x{}",
                x.rows(),
                x.cols(),
                y.rows(),
                y.cols()
            )));
        }
        let (r, c) = x.shape();
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let d = y.get(i, 0);
            for j in 0..c {
                out.set(i, j, x.get(i, j) / d);
            }
        }
        Ok(self.binary(a, b, out, Op::DivColVec(a.0, b.0)))
    }

    /// `a[i][j] / b[0][j]`.
    pub fn div_row_vec(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.val(a), self.val(b));
        if y.rows() != 1 || y.cols() != x.cols() {
            return Err(Error::Parameter(format!(
                "div_row_vec: {}x{} / {}x{}",
                x.rows(),
                x.cols(),
                y.rows(),
                y.cols()
            )));
        }
        let (r, c) = x.shape();
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                out.set(i, j, x.get(i, j) / y.get(0, j));
            }
        }
        Ok(self.binary(a, b, out, Op::DivRowVec(a.0, b.0)))
    }

    /// `a[i][j] + b[0][j]`, the bias-add pattern.
    pub fn add_row_vec(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.val(a), self.val(b));
        if y.rows() != 1 || y.cols() != x.cols() {
            return Err(Error::Parameter(format!(
                "add_row_vec: {}x{} + {}x{}",
                x.rows(),
                x.cols(),
                y.rows(),
                y.cols()
            )));
        }
        let (r, c) = x.shape();
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                out.set(i, j, x.get(i, j) + y.get(0, j));
            }
        }
        Ok(self.binary(a, b, out, Op::AddRowVec(a.0, b.0)))
    }

    // -- structural ops ---------------------------------------------------

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.val(a), self.val(b));
        if x.cols() != y.cols() {
            return Err(Error::Parameter(format!(
                "concat_rows: {} vs {} columns",
                x.cols(),
                y.cols()
            )));
        }
        let mut data = Vec::with_capacity(x.len() + y.len());
        data.extend_from_slice(x.data());
        data.extend_from_slice(y.data());
        let value = Tensor::new(x.rows() + y.rows(), x.cols(), data)?;
        Ok(self.binary(a, b, value, Op::ConcatRows(a.0, b.0)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.val(a), self.val(b));
        if x.rows() != y.rows() {
            return Err(Error::Parameter(format!(
                "concat_cols: {} vs {} rows",
                x.rows(),
                y.rows()
            )));
        }
        let (r, xc, yc) = (x.rows(), x.cols(), y.cols());
        let mut data = Vec::with_capacity(r * (xc + yc));
        for i in 0..r {
            data.extend_from_slice(x.row(i));
            data.extend_from_slice(y.row(i));
        }
        let value = Tensor::new(r, xc + yc, data)?;
        Ok(self.binary(a, b, value, Op::ConcatCols(a.0, b.0)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.check(a)?;
        let x = self.val(a);
        if start >= end || end > x.rows() {
            return Err(Error::Parameter(format!(
                "slice_rows: [{start}, {end}) of {} rows",
                x.rows()
            )));
        }
        let c = x.cols();
        let value = Tensor::new(end - start, c, x.data()[start * c..end * c].to_vec())?;
        Ok(self.unary(a, value, Op::SliceRows(a.0, start, end)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.check(a)?;
        let x = self.val(a);
        if start >= end || end > x.cols() {
            return Err(Error::Parameter(format!(
                "slice_cols: [{start}, {end}) of {} cols",
                x.cols()
            )));
        }
        let r = x.rows();
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&x.row(i)[start..end]);
        }
        let value = Tensor::new(r, end - start, data)?;
        Ok(self.unary(a, value, Op::SliceCols(a.0, start, end)))
    }

    /// Tiles a single row `times` times.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        self.check(a)?;
        let x = self.val(a);
        if x.rows() != 1 || times == 0 {
            return Err(Error::Parameter(format!(
                "repeat_rows: need a 1-row input and times >= 1, got {} rows x{times}",
                x.rows()
            )));
        }
        let mut data = Vec::with_capacity(x.cols() * times);
        for _ in 0..times {
            data.extend_from_slice(x.data());
        }
        let value = Tensor::new(times, x.cols(), data)?;
        Ok(self.unary(a, value, Op::RepeatRows(a.0, times)))
    }

    // -- 1x1 broadcast arithmetic ----------------------------------------

    fn check_scalar(&self, name: &str, s: Var) -> Result<()> {
        if !self.val(s).is_scalar() {
            let (r, c) = self.val(s).shape();
            return Err(Error::Parameter(format!(
                "{name}: second operand must be 1x1, got {r}x{c}"
            )));
        }
        Ok(())
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.check(a)?;
        self.check(s)?;
        self.check_scalar("add_scalar", s)?;
        let sv = self.val(s).get(0, 0);
        let value = self.val(a).map(|x| x + sv);
        Ok(self.binary(a, s, value, Op::AddScalar(a.0, s.0)))
    }

    pub fn sub_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.check(a)?;
        self.check(s)?;
        self.check_scalar("sub_scalar", s)?;
        let sv = self.val(s).get(0, 0);
        let value = self.val(a).map(|x| x - sv);
        Ok(self.binary(a, s, value, Op::SubScalar(a.0, s.0)))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.check(a)?;
        self.check(s)?;
        self.check_scalar("mul_scalar", s)?;
        let sv = self.val(s).get(0, 0);
        let value = self.val(a).map(|x| x * sv);
        Ok(self.binary(a, s, value, Op::MulScalar(a.0, s.0)))
    }

    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.check(a)?;
        self.check(s)?;
        self.check_scalar("div_scalar", s)?;
        let sv = self.val(s).get(0, 0);
        let value = self.val(a).map(|x| x / sv);
        Ok(self.binary(a, s, value, Op::DivScalar(a.0, s.0)))
    }

    // -- backward ---------------------------------------------------------

    /// Reverse pass from a scalar loss. Gradients accumulate additively
    /// into every node on a `requires_grad` path; read them via
    /// [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if !self.val(loss).is_scalar() {
            let (r, c) = self.val(loss).shape();
            return Err(Error::Parameter(format!(
                "backward needs a 1x1 loss, got {r}x{c}"
            )));
        }
        if !self.rg(loss) {
            return Err(Error::Parameter(
                "backward: loss does not depend on any parameter".into(),
            ));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..self.nodes.len()).rev() {
            if self.grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let grad = self.grads[i].take().unwrap();
            self.propagate(i, &grad)?;
            self.grads[i] = Some(grad);
        }
        Ok(())
    }

    fn add_to(&mut self, idx: usize, contribution: Tensor<T>) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut self.grads[idx] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(contribution.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, i: usize, d: &Tensor<T>) -> Result<()> {
        // Ops are moved out so `self` stays free for add_to; Leaf has no
        // inputs and Vec-carrying ops are cheap to restore.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = d.matmul_nt(&self.nodes[*b].value)?;
                let gb = self.nodes[*a].value.matmul_tn(d)?;
                self.add_to(*a, ga);
                self.add_to(*b, gb);
            }
            Op::Add(a, b) => {
                self.add_to(*a, d.clone());
                self.add_to(*b, d.clone());
            }
            Op::Sub(a, b) => {
                self.add_to(*a, d.clone());
                self.add_to(*b, d.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = zip(d, &self.nodes[*b].value, |g, y| g * y);
                let gb = zip(d, &self.nodes[*a].value, |g, x| g * x);
                self.add_to(*a, ga);
                self.add_to(*b, gb);
            }
            Op::Transpose(a) => self.add_to(*a, d.transpose()),
            Op::Relu(a) => {
                let g = zip(&self.nodes[*a].value, d, |x, g| {
                    if x > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                });
                self.add_to(*a, g);
            }
            Op::Exp(a) => {
                let g = zip(&self.nodes[i].value, d, |y, g| y * g);
                self.add_to(*a, g);
            }
            Op::Log(a) => {
                let g = zip(&self.nodes[*a].value, d, |x, g| g / x);
                self.add_to(*a, g);
            }
            Op::Sqrt(a) => {
                let half = cast::<T>(0.5);
                let g = zip(&self.nodes[i].value, d, |y, g| g * half / y);
                self.add_to(*a, g);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let (r, c) = y.shape();
                let mut g = Tensor::zeros(r, c);
                for row in 0..r {
                    let mut dot = T::zero();
                    for j in 0..c {
                        dot = dot + d.get(row, j) * y.get(row, j);
                    }
                    for j in 0..c {
                        g.set(row, j, y.get(row, j) * (d.get(row, j) - dot));
                    }
                }
                self.add_to(*a, g);
            }
            Op::MaxPoolRows { a, groups, argmax } => {
                let c = self.nodes[i].value.cols();
                let (in_r, in_c) = self.nodes[*a].value.shape();
                let mut g = Tensor::zeros(in_r, in_c);
                for gi in 0..groups.len() {
                    for j in 0..c {
                        let src = argmax[gi * c + j];
                        g.set(src, j, g.get(src, j) + d.get(gi, j));
                    }
                }
                self.add_to(*a, g);
            }
            Op::MeanAll(a) => {
                let x = &self.nodes[*a].value;
                let scale = d.get(0, 0) / cast(x.len() as f64);
                let g = Tensor::full(x.rows(), x.cols(), scale);
                self.add_to(*a, g);
            }
            Op::SumAll(a) => {
                let x = &self.nodes[*a].value;
                let g = Tensor::full(x.rows(), x.cols(), d.get(0, 0));
                self.add_to(*a, g);
            }
            Op::RowSum(a) => {
                let x = &self.nodes[*a].value;
                let (r, c) = x.shape();
                let mut g = Tensor::zeros(r, c);
                for row in 0..r {
                    for j in 0..c {
                        g.set(row, j, d.get(row, 0));
                    }
                }
                self.add_to(*a, g);
            }
            Op::ColSum(a) => {
                let x = &self.nodes[*a].value;
                let (r, c) = x.shape();
                let mut g = Tensor::zeros(r, c);
                for row in 0..r {
                    for j in 0..c {
                        g.set(row, j, d.get(0, j));
                    }
                }
                self.add_to(*a, g);
            }
            Op::Scale(a, s) => self.add_to(*a, d.map(|g| g * *s)),
            Op::AddConst(a, _) => self.add_to(*a, d.clone()),
            Op::ClampConst(a, lo, hi) => {
                let g = zip(&self.nodes[*a].value, d, |x, g| {
                    if x >= *lo && x <= *hi {
                        g
                    } else {
                        T::zero()
                    }
                });
                self.add_to(*a, g);
            }
            Op::PowConst(a, p) => {
                if *p != T::zero() {
                    let pm1 = *p - T::one();
                    let g = zip(&self.nodes[*a].value, d, |x, g| g * *p * x.powf(pm1));
                    self.add_to(*a, g);
                }
            }
            Op::DivColVec(a, b) => {
                let (x, y) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (r, c) = x.shape();
                let mut ga = Tensor::zeros(r, c);
                let mut gb = Tensor::zeros(r, 1);
                for row in 0..r {
                    let denom = y.get(row, 0);
                    let mut acc = T::zero();
                    for j in 0..c {
                        let gd = d.get(row, j);
                        ga.set(row, j, gd / denom);
                        acc = acc + gd * self.nodes[i].value.get(row, j);
                    }
                    gb.set(row, 0, -acc / denom);
                }
                self.add_to(*a, ga);
                self.add_to(*b, gb);
            }
            Op::DivRowVec(a, b) => {
                let (x, y) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (r, c) = x.shape();
                let mut ga = Tensor::zeros(r, c);
                let mut gb = Tensor::zeros(1, c);
                for j in 0..c {
                    let denom = y.get(0, j);
                    let mut acc = T::zero();
                    for row in 0..r {
                        let gd = d.get(row, j);
                        ga.set(row, j, gd / denom);
                        acc = acc + gd * self.nodes[i].value.get(row, j);
                    }
                    gb.set(0, j, -acc / denom);
                }
                self.add_to(*a, ga);
                self.add_to(*b, gb);
            }
            Op::AddRowVec(a, b) => {
                let x = &self.nodes[*a].value;
                let (r, c) = x.shape();
                let mut gb = Tensor::zeros(1, c);
                for j in 0..c {
                    let mut acc = T::zero();
                    for row in 0..r {
                        acc = acc + d.get(row, j);
                    }
                    gb.set(0, j, acc);
                }
                self.add_to(*a, d.clone());
                self.add_to(*b, gb);
            }
            Op::ConcatRows(a, b) => {
                let ra = self.nodes[*a].value.rows();
                let c = d.cols();
                let ga = Tensor::new(ra, c, d.data()[..ra * c].to_vec())?;
                let gb = Tensor::new(d.rows() - ra, c, d.data()[ra * c..].to_vec())?;
                self.add_to(*a, ga);
                self.add_to(*b, gb);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[*a].value.cols();
                let (r, c) = d.shape();
                let mut da = Vec::with_capacity(r * ca);
                let mut db = Vec::with_capacity(r * (c - ca));
                for row in 0..r {
                    da.extend_from_slice(&d.row(row)[..ca]);
                    db.extend_from_slice(&d.row(row)[ca..]);
                }
                self.add_to(*a, Tensor::new(r, ca, da)?);
                self.add_to(*b, Tensor::new(r, c - ca, db)?);
            }
            Op::SliceRows(a, start, _end) => {
                let x = &self.nodes[*a].value;
                let (r, c) = x.shape();
                let mut g = Tensor::zeros(r, c);
                for row in 0..d.rows() {
                    for j in 0..c {
                        g.set(start + row, j, d.get(row, j));
                    }
                }
                self.add_to(*a, g);
            }
            Op::SliceCols(a, start, _end) => {
                let x = &self.nodes[*a].value;
                let (r, c) = x.shape();
                let mut g = Tensor::zeros(r, c);
                for row in 0..r {
                    for j in 0..d.cols() {
                        g.set(row, start + j, d.get(row, j));
                    }
                }
                self.add_to(*a, g);
            }
            Op::RepeatRows(a, times) => {
                let c = d.cols();
                let mut g = Tensor::zeros(1, c);
                for row in 0..*times {
                    for j in 0..c {
                        g.set(0, j, g.get(0, j) + d.get(row, j));
                    }
                }
                self.add_to(*a, g);
            }
            Op::AddScalar(a, s) => {
                let total = d.data().iter().fold(T::zero(), |acc, &v| acc + v);
                self.add_to(*a, d.clone());
                self.add_to(*s, Tensor::scalar(total));
            }
            Op::SubScalar(a, s) => {
                let total = d.data().iter().fold(T::zero(), |acc, &v| acc + v);
                self.add_to(*a, d.clone());
                self.add_to(*s, Tensor::scalar(-total));
            }
            Op::MulScalar(a, s) => {
                let sv = self.nodes[*s].value.get(0, 0);
                let ga = d.map(|g| g * sv);
                let total = d
                    .data()
                    .iter()
                    .zip(self.nodes[*a].value.data())
                    .fold(T::zero(), |acc, (&g, &x)| acc + g * x);
                self.add_to(*a, ga);
                self.add_to(*s, Tensor::scalar(total));
            }
            Op::DivScalar(a, s) => {
                let sv = self.nodes[*s].value.get(0, 0);
                let ga = d.map(|g| g / sv);
                let total = d
                    .data()
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .fold(T::zero(), |acc, (&g, &y)| acc + g * y);
                self.add_to(*a, ga);
                self.add_to(*s, Tensor::scalar(-total / sv));
            }
        }
        self.nodes[i].op = op;
        Ok(())
    }
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("zip preserves shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.param(t(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, -1.0]));
        let loss = tape.sum_all(w).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(t(1, 2, &[1.0, 2.0]));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn softmax_of_constant_row_is_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(2, 4, 3.7));
        let y = tape.softmax_rows(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_forward_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 3, &[-2.0, 0.0, 1.5]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 1.5]);
    }

    #[test]
    fn shared_input_accumulates_gradient() {
        // loss = sum(w + w) should produce grad 2, same as duplicating w.
        let mut tape = Tape::new();
        let w = tape.param(t(1, 2, &[0.3, -0.7]));
        let s = tape.add(w, w).unwrap();
        let loss = tape.sum_all(s).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn matmul_gradients_match_analytic() {
        // loss = sum(A . B): dA = rowsum-ish ones . B^T, dB = A^T . ones.
        let mut tape = Tape::new();
        let a = tape.param(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.param(t(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(c).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_first_argmax() {
        let mut tape = Tape::new();
        let x = tape.param(t(4, 2, &[1.0, 5.0, 3.0, 5.0, 2.0, 0.0, 2.0, 7.0]));
        let y = tape.max_pool_rows(x, vec![(0, 2), (2, 4)]).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 5.0, 2.0, 7.0]);
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        // Tie in column 1 of group 0 goes to row 0, and the tie in
        // column 0 of group 1 goes to row 2.
        assert_eq!(
            tape.grad(x).unwrap().data(),
            &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let w = tape.param(t(2, 2, &[1.0; 4]));
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn backward_rejects_constant_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(3, 3));
        assert!(tape.add(a, b).is_err());
        assert!(tape.mul(a, b).is_err());
        assert!(tape.matmul(a, b).is_ok());
        assert!(tape.matmul(a, a).is_err());
        assert!(tape.concat_cols(a, b).is_err());
        assert!(tape.slice_rows(a, 1, 4).is_err());
        assert!(tape.add_scalar(a, b).is_err());
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let cat = tape.concat_cols(a, b).unwrap();
        let left = tape.slice_cols(cat, 0, 2).unwrap();
        let right = tape.slice_cols(cat, 2, 4).unwrap();
        assert_eq!(tape.value(left), tape.value(a));
        assert_eq!(tape.value(right), tape.value(b));

        let cat = tape.concat_rows(a, b).unwrap();
        let top = tape.slice_rows(cat, 0, 2).unwrap();
        assert_eq!(tape.value(top), tape.value(a));
    }
}
