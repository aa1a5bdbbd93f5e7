//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of [`GraphNode`]s appended in evaluation order, so the
//! node index is already a topological order. Leaves created with
//! [`Graph::param`] receive gradients; [`Graph::constant`] leaves do not, and
//! neither does anything computed only from constants. A fresh graph is built
//! for every batch.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Softplus(Var),
    Relu(Var),
    LeakyRelu(Var, S),
    Clamp(Var, S, S),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Transpose(Var),
    SliceCols(Var, usize),
    ConcatCols(Var, Var),
    LogSumExpRows(Var, Option<Rc<[bool]>>),
}

/// One recorded operation with its cached forward value.
#[derive(Clone, Debug)]
pub struct GraphNode<S> {
    op: Op<S>,
    value: Tensor<S>,
    requires_grad: bool,
}

impl<S: Scalar> GraphNode<S> {
    pub fn value(&self) -> &Tensor<S> {
        &self.value
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Short tag naming the recorded operation.
    pub fn kind(&self) -> &'static str {
        match self.op {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Neg(..) => "neg",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Clamp(..) => "clamp",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumRows(..) => "sum_rows",
            Op::Transpose(..) => "transpose",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::LogSumExpRows(..) => "log_sum_exp_rows",
        }
    }
}

/// Gradients of a scalar root with respect to every node that requires one.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of `like`'s shape when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<S>) -> Tensor<S> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<GraphNode<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &GraphNode<S> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(GraphNode {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, op: Op<S>, f: impl Fn(S) -> S) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(op, value, rg)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<S>,
        name: &'static str,
        f: impl Fn(S, S) -> S,
    ) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), name, f)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(op, value, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a `(1, m)` row vector to every row of an `(n, m)` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if !av.is_matrix() || rv.shape() != [1, av.cols()] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: av.shape().to_vec(),
                right: rv.shape().to_vec(),
            });
        }
        let m = av.cols();
        let mut value = av.clone();
        for (i, x) in value.data_mut().iter_mut().enumerate() {
            *x += rv.data()[i % m];
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(Op::AddRow(a, row), value, rg))
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        self.unary(a, Op::Scale(a, k), |x| x * k)
    }

    pub fn add_scalar(&mut self, a: Var, k: S) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + k)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), S::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), S::ln)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), S::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// `log(sigmoid(x))`, evaluated without forming the sigmoid.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid(a), |x| -softplus(-x))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(S::zero()))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > S::zero() { x } else { slope * x })
    }

    /// Elementwise clamp; the gradient is passed through only inside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), value, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(&[a]);
        self.push(Op::Mean(a), value, rg)
    }

    /// Row sums of an `(n, m)` matrix as an `(n, 1)` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let sums = (0..av.rows()).map(|i| av.row(i).iter().copied().sum()).collect();
        let rg = self.rg(&[a]);
        self.push(Op::SumRows(a), Tensor::column(sums), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Transpose(a), value, rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if !av.is_matrix() || start > end || end > av.cols() {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: av.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let (n, m) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            data.extend_from_slice(&av.data()[i * m + start..i * m + end]);
        }
        let value = Tensor::new([n, end - start], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::SliceCols(a, start), value, rg))
    }

    /// Horizontal concatenation `[a | b]` of two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_matrix() || !bv.is_matrix() || av.rows() != bv.rows() {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (n, ma, mb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(n * (ma + mb));
        for i in 0..n {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let value = Tensor::new([n, ma + mb], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::ConcatCols(a, b), value, rg))
    }

    /// Per-row `log Σ_j exp(x_ij)` over entries where `mask` is true
    /// (all entries when `mask` is `None`), stabilised by the row maximum.
    pub fn log_sum_exp_rows(&mut self, a: Var, mask: Option<Rc<[bool]>>) -> Result<Var> {
        let av = self.value(a);
        if let Some(m) = &mask {
            if m.len() != av.len() {
                return Err(Error::ShapeMismatch {
                    op: "log_sum_exp_rows",
                    left: av.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
        }
        let cols = av.cols();
        let mut out = Vec::with_capacity(av.rows());
        for i in 0..av.rows() {
            let keep = |j: usize| mask.as_ref().is_none_or(|m| m[i * cols + j]);
            let row = av.row(i);
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(S::neg_infinity(), S::max);
            if max == S::neg_infinity() {
                return Err(Error::invalid("log_sum_exp_rows: row with no unmasked entries"));
            }
            let s: S = (0..cols).filter(|&j| keep(j)).map(|j| (row[j] - max).exp()).sum();
            out.push(max + s.ln());
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Op::LogSumExpRows(a, mask), Tensor::column(out), rg))
    }

    /// Reverse sweep from a single-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(rv.shape().to_vec(), S::one()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        node: &GraphNode<S>,
        g: &Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<()> {
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Tensor<S>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += *d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        let lift = |x: &Tensor<S>, f: &dyn Fn(S, S) -> S| -> Tensor<S> {
            let data = x.data().iter().zip(g.data()).map(|(&a, &b)| f(a, b)).collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape")
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul(&val(*b).transpose()?)?);
                acc(*b, val(*a).transpose()?.matmul(g)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let m = g.cols();
                let mut col_sums = vec![S::zero(); m];
                for (i, &x) in g.data().iter().enumerate() {
                    col_sums[i % m] += x;
                }
                acc(*row, Tensor::new([1, m], col_sums)?);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, lift(val(*b), &|y, gi| y * gi));
                acc(*b, lift(val(*a), &|x, gi| x * gi));
            }
            Op::Scale(a, k) => {
                let k = *k;
                acc(*a, g.map(|x| x * k));
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Neg(a) => acc(*a, g.map(|x| -x)),
            Op::Exp(a) => acc(*a, lift(out, &|y, gi| y * gi)),
            Op::Log(a) => acc(*a, lift(val(*a), &|x, gi| gi / x)),
            Op::Tanh(a) => acc(*a, lift(out, &|y, gi| gi * (S::one() - y * y))),
            Op::Sigmoid(a) => acc(*a, lift(out, &|y, gi| gi * y * (S::one() - y))),
            Op::LogSigmoid(a) => acc(*a, lift(val(*a), &|x, gi| gi * sigmoid(-x))),
            Op::Softplus(a) => acc(*a, lift(val(*a), &|x, gi| gi * sigmoid(x))),
            Op::Relu(a) => acc(
                *a,
                lift(val(*a), &|x, gi| if x > S::zero() { gi } else { S::zero() }),
            ),
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                acc(*a, lift(val(*a), &|x, gi| if x > S::zero() { gi } else { slope * gi }));
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(
                    *a,
                    lift(val(*a), &|x, gi| if x >= lo && x <= hi { gi } else { S::zero() }),
                );
            }
            Op::Square(a) => acc(*a, lift(val(*a), &|x, gi| (x + x) * gi)),
            Op::Sum(a) => {
                let gi = g.item();
                acc(*a, Tensor::full(val(*a).shape().to_vec(), gi));
            }
            Op::Mean(a) => {
                let av = val(*a);
                let gi = g.item() / S::from_usize_lossy(av.len());
                acc(*a, Tensor::full(av.shape().to_vec(), gi));
            }
            Op::SumRows(a) => {
                let av = val(*a);
                let m = av.cols();
                let data = (0..av.len()).map(|i| g.data()[i / m]).collect();
                acc(*a, Tensor::new(av.shape().to_vec(), data)?);
            }
            Op::Transpose(a) => acc(*a, g.transpose()?),
            Op::SliceCols(a, start) => {
                let av = val(*a);
                let (n, m, w) = (av.rows(), av.cols(), g.cols());
                let mut d = Tensor::zeros(av.shape().to_vec());
                for i in 0..n {
                    d.data_mut()[i * m + start..i * m + start + w].copy_from_slice(g.row(i));
                }
                acc(*a, d);
            }
            Op::ConcatCols(a, b) => {
                let (ma, mb) = (val(*a).cols(), val(*b).cols());
                let n = g.rows();
                let mut da = Vec::with_capacity(n * ma);
                let mut db = Vec::with_capacity(n * mb);
                for i in 0..n {
                    let r = g.row(i);
                    da.extend_from_slice(&r[..ma]);
                    db.extend_from_slice(&r[ma..]);
                }
                acc(*a, Tensor::new([n, ma], da)?);
                acc(*b, Tensor::new([n, mb], db)?);
            }
            Op::LogSumExpRows(a, mask) => {
                let av = val(*a);
                let m = av.cols();
                let mut d = Tensor::zeros(av.shape().to_vec());
                for (idx, x) in av.data().iter().enumerate() {
                    let i = idx / m;
                    if mask.as_ref().is_none_or(|mk| mk[idx]) {
                        d.data_mut()[idx] = g.data()[i] * (*x - out.data()[i]).exp();
                    }
                }
                acc(*a, d);
            }
        }
        Ok(())
    }
}
