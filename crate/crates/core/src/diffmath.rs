//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in insertion order; [`Value`] is a
//! cheap copyable handle to one recorded node. Calling [`Tape::backward`]
//! on a `1x1` node walks the tape in strict reverse order and returns a
//! [`Gradients`] map for every leaf.
//!
//! ```
//! use introlab::diffmath::Tape;
//! use ndarray::arr2;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(arr2(&[[3.0]]));
//! let y = tape.square(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x)[[0, 0]], 6.0);
//! ```
//!
//! Elementwise binary ops accept identical shapes or a `1 x n` operand that
//! is broadcast down the rows of an `m x n` operand. Nothing else broadcasts.

use ndarray::{s, Array2, Axis, Zip};
use thiserror::Error;

pub type Matrix = Array2<f64>;

type Shape = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("{op}: input outside the domain of the operation ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("{op} takes {expected} operand(s), got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NonScalarLoss(Shape),
    #[error("value handle does not belong to the live tape")]
    StaleValue,
    #[error("invalid operation parameter: {0}")]
    InvalidOp(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;

/// Operation kinds understood by [`Tape::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Exp,
    Log,
    Tanh,
    Relu,
    Square,
    Sqrt,
    /// Sum of all entries, `1x1`.
    Sum,
    /// Mean of all entries, `1x1`.
    Mean,
    /// Sum across columns, `m x 1`.
    RowSum,
    /// Repeat a `1 x n` row `rows` times.
    Broadcast { rows: usize },
    /// Clamp into `[lo, hi]`. Gradient passes through inside the interval and
    /// is zero outside it.
    Clamp { lo: f64, hi: f64 },
    /// Multiply by a constant.
    Scale(f64),
    /// Add a constant.
    Shift(f64),
    Transpose,
    /// Columns `start..end`.
    SliceCols { start: usize, end: usize },
    /// `[a | b]`; both operands need the same row count.
    ConcatCols,
    /// Pairwise Gaussian overlap kernel. Each operand row is `[mean | var]`
    /// of an `n`-dimensional diagonal Gaussian; entry `(i, j)` is
    /// `prod_d N(u_id - u_jd; 0, var_id + var_jd)`, giving a `Ba x Bb` result.
    GaussKernel,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::MatMul => "matmul",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::RowSum => "row-sum",
            Op::Broadcast { .. } => "broadcast",
            Op::Clamp { .. } => "clamp",
            Op::Scale(_) => "scale",
            Op::Shift(_) => "shift",
            Op::Transpose => "transpose",
            Op::SliceCols { .. } => "slice-cols",
            Op::ConcatCols => "concat-cols",
            Op::GaussKernel => "gauss-kernel",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::MatMul | Op::ConcatCols | Op::GaussKernel => 2,
            _ => 1,
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value {
    id: usize,
    epoch: u64,
}

impl Value {
    pub fn id(&self) -> usize {
        self.id
    }
}

#[derive(Debug)]
struct Node {
    data: Matrix,
    op: Option<Op>,
    inputs: [usize; 2],
    requires_grad: bool,
}

/// Append-only operation record. Single owner; not `Sync` by design of use,
/// but distinct tapes are independent and can live on distinct threads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    epoch: u64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every node. Handles created before the call become stale.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.epoch += 1;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, data: Matrix) -> Value {
        self.push(data, None, [0, 0], true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, data: Matrix) -> Value {
        self.push(data, None, [0, 0], false)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Value {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Copies the current data of `v` into a new constant, cutting the graph.
    pub fn detach(&mut self, v: Value) -> Result<Value> {
        let id = self.check(v)?;
        let data = self.nodes[id].data.clone();
        Ok(self.constant(data))
    }

    pub fn value(&self, v: Value) -> &Matrix {
        let id = self.check(v).expect("stale value handle");
        &self.nodes[id].data
    }

    pub fn shape(&self, v: Value) -> Shape {
        self.value(v).dim()
    }

    /// The `[0, 0]` entry; intended for `1x1` values.
    pub fn scalar(&self, v: Value) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn requires_grad(&self, v: Value) -> bool {
        let id = self.check(v).expect("stale value handle");
        self.nodes[id].requires_grad
    }

    fn check(&self, v: Value) -> Result<usize> {
        if v.epoch != self.epoch || v.id >= self.nodes.len() {
            return Err(DiffError::StaleValue);
        }
        Ok(v.id)
    }

    fn push(&mut self, data: Matrix, op: Option<Op>, inputs: [usize; 2], requires_grad: bool) -> Value {
        let id = self.nodes.len();
        self.nodes.push(Node {
            data,
            op,
            inputs,
            requires_grad,
        });
        Value {
            id,
            epoch: self.epoch,
        }
    }

    /// Records `op` applied to `operands` and returns the result node.
    pub fn apply(&mut self, op: Op, operands: &[Value]) -> Result<Value> {
        if operands.len() != op.arity() {
            return Err(DiffError::Arity {
                op: op.name(),
                expected: op.arity(),
                got: operands.len(),
            });
        }
        let a = self.check(operands[0])?;
        let b = if op.arity() == 2 { self.check(operands[1])? } else { a };
        let data = self.forward(op, a, b)?;
        let requires_grad = self.nodes[a].requires_grad || (op.arity() == 2 && self.nodes[b].requires_grad);
        Ok(self.push(data, Some(op), [a, b], requires_grad))
    }

    fn forward(&self, op: Op, a: usize, b: usize) -> Result<Matrix> {
        let x = &self.nodes[a].data;
        let y = &self.nodes[b].data;
        let name = op.name();
        let out = match op {
            Op::Add => {
                broadcast_shape(name, x.dim(), y.dim())?;
                x + y
            }
            Op::Sub => {
                broadcast_shape(name, x.dim(), y.dim())?;
                x - y
            }
            Op::Mul => {
                broadcast_shape(name, x.dim(), y.dim())?;
                x * y
            }
            Op::Div => {
                broadcast_shape(name, x.dim(), y.dim())?;
                if y.iter().any(|&v| v == 0.0) {
                    return Err(DiffError::Domain {
                        op: name,
                        detail: "zero divisor".into(),
                    });
                }
                x / y
            }
            Op::MatMul => {
                if x.ncols() != y.nrows() {
                    return Err(DiffError::ShapeMismatch {
                        op: name,
                        lhs: x.dim(),
                        rhs: y.dim(),
                    });
                }
                x.dot(y)
            }
            Op::Exp => x.mapv(f64::exp),
            Op::Log => {
                if let Some(bad) = x.iter().find(|&&v| !(v > 0.0)) {
                    return Err(DiffError::Domain {
                        op: name,
                        detail: format!("nonpositive input {bad}"),
                    });
                }
                x.mapv(f64::ln)
            }
            Op::Tanh => x.mapv(f64::tanh),
            Op::Relu => x.mapv(|v| v.max(0.0)),
            Op::Square => x.mapv(|v| v * v),
            Op::Sqrt => {
                if let Some(bad) = x.iter().find(|&&v| !(v >= 0.0)) {
                    return Err(DiffError::Domain {
                        op: name,
                        detail: format!("negative input {bad}"),
                    });
                }
                x.mapv(f64::sqrt)
            }
            Op::Sum => Array2::from_elem((1, 1), x.sum()),
            Op::Mean => Array2::from_elem((1, 1), x.sum() / x.len() as f64),
            Op::RowSum => x.sum_axis(Axis(1)).insert_axis(Axis(1)),
            Op::Broadcast { rows } => {
                if x.nrows() != 1 || rows == 0 {
                    return Err(DiffError::ShapeMismatch {
                        op: name,
                        lhs: x.dim(),
                        rhs: (rows, x.ncols()),
                    });
                }
                x.broadcast((rows, x.ncols())).expect("checked 1xn").to_owned()
            }
            Op::Clamp { lo, hi } => {
                if !(lo <= hi) {
                    return Err(DiffError::InvalidOp(format!("clamp bounds [{lo}, {hi}]")));
                }
                x.mapv(|v| v.clamp(lo, hi))
            }
            Op::Scale(k) => x * k,
            Op::Shift(k) => x + k,
            Op::Transpose => x.t().to_owned(),
            Op::SliceCols { start, end } => {
                if start >= end || end > x.ncols() {
                    return Err(DiffError::InvalidOp(format!(
                        "column slice {start}..{end} of a {}-column value",
                        x.ncols()
                    )));
                }
                x.slice(s![.., start..end]).to_owned()
            }
            Op::ConcatCols => {
                if x.nrows() != y.nrows() {
                    return Err(DiffError::ShapeMismatch {
                        op: name,
                        lhs: x.dim(),
                        rhs: y.dim(),
                    });
                }
                ndarray::concatenate(Axis(1), &[x.view(), y.view()]).expect("row counts checked")
            }
            Op::GaussKernel => {
                if x.ncols() != y.ncols() || x.ncols() % 2 != 0 || x.ncols() == 0 {
                    return Err(DiffError::ShapeMismatch {
                        op: name,
                        lhs: x.dim(),
                        rhs: y.dim(),
                    });
                }
                let n = x.ncols() / 2;
                for m in [x, y] {
                    if let Some(bad) = m.slice(s![.., n..]).iter().find(|&&v| !(v > 0.0)) {
                        return Err(DiffError::Domain {
                            op: name,
                            detail: format!("nonpositive variance {bad}"),
                        });
                    }
                }
                gauss_kernel(x, y)
            }
        };
        Ok(out)
    }

    /// Back-propagates from a `1x1` node.
    ///
    /// Calling it again on the same tape recomputes the same map; nothing on
    /// the tape is mutated.
    pub fn backward(&self, loss: Value) -> Result<Gradients> {
        let root = self.check(loss)?;
        let shape = self.nodes[root].data.dim();
        if shape != (1, 1) {
            return Err(DiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root] = Some(Array2::ones((1, 1)));
        for id in (0..=root).rev() {
            let node = &self.nodes[id];
            let Some(op) = node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(op, id, &g, &mut grads);
            if id == root {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients {
            epoch: self.epoch,
            grads,
            shapes: self.nodes.iter().map(|n| n.data.dim()).collect(),
        })
    }

    fn propagate(&self, op: Op, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        let [a, b] = node.inputs;
        let out = &node.data;
        let x = &self.nodes[a].data;
        let y = &self.nodes[b].data;
        let need_a = self.nodes[a].requires_grad;
        let need_b = op.arity() == 2 && self.nodes[b].requires_grad;

        match op {
            Op::Add => {
                if need_a {
                    accumulate(grads, a, x.dim(), g.clone());
                }
                if need_b {
                    accumulate(grads, b, y.dim(), g.clone());
                }
            }
            Op::Sub => {
                if need_a {
                    accumulate(grads, a, x.dim(), g.clone());
                }
                if need_b {
                    accumulate(grads, b, y.dim(), -g);
                }
            }
            Op::Mul => {
                if need_a {
                    accumulate(grads, a, x.dim(), g * y);
                }
                if need_b {
                    accumulate(grads, b, y.dim(), g * x);
                }
            }
            Op::Div => {
                if need_a {
                    accumulate(grads, a, x.dim(), g / y);
                }
                if need_b {
                    let mut gb = g * out;
                    gb /= y;
                    gb.mapv_inplace(|v| -v);
                    accumulate(grads, b, y.dim(), gb);
                }
            }
            Op::MatMul => {
                if need_a {
                    accumulate(grads, a, x.dim(), g.dot(&y.t()));
                }
                if need_b {
                    accumulate(grads, b, y.dim(), x.t().dot(g));
                }
            }
            Op::Exp => accumulate(grads, a, x.dim(), g * out),
            Op::Log => accumulate(grads, a, x.dim(), g / x),
            Op::Tanh => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(out).for_each(|ga, &t| *ga *= 1.0 - t * t);
                accumulate(grads, a, x.dim(), ga);
            }
            Op::Relu => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(x).for_each(|ga, &v| {
                    if v <= 0.0 {
                        *ga = 0.0;
                    }
                });
                accumulate(grads, a, x.dim(), ga);
            }
            Op::Square => {
                let mut ga = g * x;
                ga *= 2.0;
                accumulate(grads, a, x.dim(), ga);
            }
            Op::Sqrt => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(out).for_each(|ga, &r| *ga *= 0.5 / r);
                accumulate(grads, a, x.dim(), ga);
            }
            Op::Sum => accumulate(grads, a, x.dim(), Array2::from_elem(x.dim(), g[[0, 0]])),
            Op::Mean => {
                let scale = g[[0, 0]] / x.len() as f64;
                accumulate(grads, a, x.dim(), Array2::from_elem(x.dim(), scale));
            }
            Op::RowSum => {
                let ga = g.broadcast(x.dim()).expect("m x 1 broadcasts to m x n").to_owned();
                accumulate(grads, a, x.dim(), ga);
            }
            Op::Broadcast { .. } => {
                accumulate(grads, a, x.dim(), g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Clamp { lo, hi } => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(x).for_each(|ga, &v| {
                    if !(lo..=hi).contains(&v) {
                        *ga = 0.0;
                    }
                });
                accumulate(grads, a, x.dim(), ga);
            }
            Op::Scale(k) => accumulate(grads, a, x.dim(), g * k),
            Op::Shift(_) => accumulate(grads, a, x.dim(), g.clone()),
            Op::Transpose => accumulate(grads, a, x.dim(), g.t().to_owned()),
            Op::SliceCols { start, end } => {
                let mut ga = Array2::zeros(x.dim());
                ga.slice_mut(s![.., start..end]).assign(g);
                accumulate(grads, a, x.dim(), ga);
            }
            Op::ConcatCols => {
                let split = x.ncols();
                if need_a {
                    accumulate(grads, a, x.dim(), g.slice(s![.., ..split]).to_owned());
                }
                if need_b {
                    accumulate(grads, b, y.dim(), g.slice(s![.., split..]).to_owned());
                }
            }
            Op::GaussKernel => {
                let (ga, gb) = gauss_kernel_grads(x, y, out, g);
                if need_a {
                    accumulate(grads, a, x.dim(), ga);
                }
                if need_b {
                    accumulate(grads, b, y.dim(), gb);
                }
            }
        }
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn div(&mut self, a: Value, b: Value) -> Result<Value> {
        self.apply(Op::Div, &[a, b])
    }
    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn exp(&mut self, a: Value) -> Result<Value> {
        self.apply(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: Value) -> Result<Value> {
        self.apply(Op::Log, &[a])
    }
    pub fn tanh(&mut self, a: Value) -> Result<Value> {
        self.apply(Op::Tanh, &[a])
    }
    pub fn relu(&mut self, a: Value) -> Result<Value> {
        self.apply(Op::Relu, &[a])
    }
    pub fn square(&mut self, a: Value) -> Result<Value> {
        self.apply(Op::Square, &[a])
    }
    pub fn sqrt(&mut self, a: Value) -> Result<Value> {
        self.apply(Op::Sqrt, &[a])
    }
    pub fn sum(&mut self, a: Value) -> Result<Value> {
        self.apply(Op::Sum, &[a])
    }
    pub fn mean(&mut self, a: Value) -> Result<Value> {
        self.apply(Op::Mean, &[a])
    }
    pub fn row_sum(&mut self, a: Value) -> Result<Value> {
        self.apply(Op::RowSum, &[a])
    }
    pub fn broadcast(&mut self, a: Value, rows: usize) -> Result<Value> {
        self.apply(Op::Broadcast { rows }, &[a])
    }
    pub fn clamp(&mut self, a: Value, lo: f64, hi: f64) -> Result<Value> {
        self.apply(Op::Clamp { lo, hi }, &[a])
    }
    pub fn scale(&mut self, a: Value, k: f64) -> Result<Value> {
        self.apply(Op::Scale(k), &[a])
    }
    pub fn shift(&mut self, a: Value, k: f64) -> Result<Value> {
        self.apply(Op::Shift(k), &[a])
    }
    pub fn neg(&mut self, a: Value) -> Result<Value> {
        self.apply(Op::Scale(-1.0), &[a])
    }
    pub fn transpose(&mut self, a: Value) -> Result<Value> {
        self.apply(Op::Transpose, &[a])
    }
    pub fn slice_cols(&mut self, a: Value, start: usize, end: usize) -> Result<Value> {
        self.apply(Op::SliceCols { start, end }, &[a])
    }
    pub fn concat_cols(&mut self, a: Value, b: Value) -> Result<Value> {
        self.apply(Op::ConcatCols, &[a, b])
    }
    pub fn gauss_kernel(&mut self, a: Value, b: Value) -> Result<Value> {
        self.apply(Op::GaussKernel, &[a, b])
    }

    /// `out[i, j] = a[i] + b[j]` for column vectors `a` (`m x 1`) and `b` (`n x 1`).
    pub fn outer_add(&mut self, a: Value, b: Value) -> Result<Value> {
        let (left, right) = self.outer_operands(a, b)?;
        self.add(left, right)
    }

    /// `out[i, j] = a[i] - b[j]` for column vectors `a` (`m x 1`) and `b` (`n x 1`).
    pub fn outer_sub(&mut self, a: Value, b: Value) -> Result<Value> {
        let (left, right) = self.outer_operands(a, b)?;
        self.sub(left, right)
    }

    // Expands `a` to m x n through a matmul with a ones row and turns `b`
    // into a 1 x n row that the elementwise op broadcasts.
    fn outer_operands(&mut self, a: Value, b: Value) -> Result<(Value, Value)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != 1 || sb.1 != 1 {
            return Err(DiffError::ShapeMismatch {
                op: "outer",
                lhs: sa,
                rhs: sb,
            });
        }
        let ones = self.constant(Array2::ones((1, sb.0)));
        let left = self.matmul(a, ones)?;
        let right = self.transpose(b)?;
        Ok((left, right))
    }
}

fn gauss_kernel(x: &Matrix, y: &Matrix) -> Matrix {
    let n = x.ncols() / 2;
    let two_pi = 2.0 * std::f64::consts::PI;
    let (xs, ys) = (x.as_standard_layout(), y.as_standard_layout());
    let (xs, ys) = (xs.as_slice().expect("standard layout"), ys.as_slice().expect("standard layout"));
    let mut out = Vec::with_capacity(x.nrows() * y.nrows());
    for xr in xs.chunks_exact(2 * n) {
        for yr in ys.chunks_exact(2 * n) {
            let mut quad = 0.0;
            let mut norm = 1.0;
            for d in 0..n {
                let s = xr[n + d] + yr[n + d];
                let delta = xr[d] - yr[d];
                quad += delta * delta / s;
                norm *= two_pi * s;
            }
            out.push((-0.5 * quad).exp() / norm.sqrt());
        }
    }
    Array2::from_shape_vec((x.nrows(), y.nrows()), out).expect("one entry per pair")
}

/// Gradients of `sum(g * K)` with respect to both kernel operands.
fn gauss_kernel_grads(x: &Matrix, y: &Matrix, k: &Matrix, g: &Matrix) -> (Matrix, Matrix) {
    let n = x.ncols() / 2;
    let (xs, ys) = (x.as_standard_layout(), y.as_standard_layout());
    let (xs, ys) = (xs.as_slice().expect("standard layout"), ys.as_slice().expect("standard layout"));
    let mut ga = vec![0.0; xs.len()];
    let mut gb = vec![0.0; ys.len()];
    for (i, (xr, gar)) in xs.chunks_exact(2 * n).zip(ga.chunks_exact_mut(2 * n)).enumerate() {
        let (krow, grow) = (k.row(i), g.row(i));
        for (j, (yr, gbr)) in ys.chunks_exact(2 * n).zip(gb.chunks_exact_mut(2 * n)).enumerate() {
            let w = grow[j] * krow[j];
            if w == 0.0 {
                continue;
            }
            for d in 0..n {
                let s = xr[n + d] + yr[n + d];
                let r = (xr[d] - yr[d]) / s;
                let du = -w * r;
                let dv = 0.5 * w * (r * r - 1.0 / s);
                gar[d] += du;
                gar[n + d] += dv;
                gbr[d] -= du;
                gbr[n + d] += dv;
            }
        }
    }
    (
        Array2::from_shape_vec(x.dim(), ga).expect("same shape"),
        Array2::from_shape_vec(y.dim(), gb).expect("same shape"),
    )
}

fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    if a == b {
        Ok(a)
    } else if a.0 == 1 && a.1 == b.1 {
        Ok(b)
    } else if b.0 == 1 && b.1 == a.1 {
        Ok(a)
    } else {
        Err(DiffError::ShapeMismatch { op, lhs: a, rhs: b })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: usize, shape: Shape, contribution: Matrix) {
    let contribution = if contribution.dim() != shape {
        // Operand was a broadcast 1 x n row.
        contribution.sum_axis(Axis(0)).insert_axis(Axis(0))
    } else {
        contribution
    };
    match &mut grads[id] {
        Some(acc) => *acc += &contribution,
        slot @ None => *slot = Some(contribution),
    }
}

/// Result of [`Tape::backward`]: gradients for every leaf and the loss node.
#[derive(Debug, Clone)]
pub struct Gradients {
    epoch: u64,
    grads: Vec<Option<Matrix>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// The accumulated gradient, or `None` if `v` is unreachable from the loss.
    pub fn get(&self, v: Value) -> Option<&Matrix> {
        if v.epoch != self.epoch {
            return None;
        }
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but unreachable values yield zeros.
    pub fn wrt(&self, v: Value) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes.get(v.id).copied().unwrap_or((0, 0))),
        }
    }
}
