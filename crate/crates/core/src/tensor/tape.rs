use std::str::FromStr;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Operation kinds accepted by [`Tape::apply`].
///
/// Shape rules (no broadcasting anywhere):
/// - `MatMul`: `[m,k]·[k,n] → [m,n]`, `[m,k]·[k] → [m]`, `[k]·[k,n] → [n]`
/// - `Add`, `Sub`, `Mul`: identical shapes, elementwise
/// - `Concat { axis }`: rank-1 along axis 0, rank-2 along axis 0 (rows) or 1 (columns)
/// - `Tanh`, `Sigmoid`, `Relu`, `Log`: elementwise, shape preserved
/// - `Softmax { axis }`: normalizes along `axis`, shape preserved
/// - `EmbeddingLookup`: table `[V,E]` gathered by ids into `[n,E]`; the padding id maps to a zero row
/// - `ReduceSum`, `ReduceMean`: any shape to `[1]`
/// - `SquaredDistance`: two identical shapes to `[1]`, `Σ (a - b)²`
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Concat { axis: usize },
    Tanh,
    Sigmoid,
    Relu,
    Softmax { axis: usize },
    Log,
    EmbeddingLookup { ids: Vec<usize>, padding: Option<usize> },
    ReduceSum,
    ReduceMean,
    SquaredDistance,
}

impl FromStr for OpKind {
    type Err = Error;

    /// Parses `matmul`, `add`, `concat(1)`, `softmax(0)`, `reduce-sum`, ...
    /// Embedding lookups carry ids and cannot be named this way.
    fn from_str(s: &str) -> Result<Self> {
        let axis_arg = |name: &str| -> Option<usize> {
            s.strip_prefix(name)?
                .strip_prefix('(')?
                .strip_suffix(')')?
                .trim()
                .parse()
                .ok()
        };
        let kind = match s {
            "matmul" => OpKind::MatMul,
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" | "elementwise-mul" => OpKind::Mul,
            "tanh" => OpKind::Tanh,
            "sigmoid" => OpKind::Sigmoid,
            "relu" => OpKind::Relu,
            "log" => OpKind::Log,
            "reduce-sum" => OpKind::ReduceSum,
            "reduce-mean" => OpKind::ReduceMean,
            "squared-l2-distance" => OpKind::SquaredDistance,
            "concat" => OpKind::Concat { axis: 0 },
            "softmax" => OpKind::Softmax { axis: 0 },
            _ => {
                if let Some(axis) = axis_arg("concat") {
                    OpKind::Concat { axis }
                } else if let Some(axis) = axis_arg("softmax") {
                    OpKind::Softmax { axis }
                } else {
                    return Err(Error::UnknownOp(s.to_string()));
                }
            }
        };
        Ok(kind)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    AddScalar(Var),
    Scale(Var, f64),
    Concat(Vec<Var>, usize),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Softmax(Var, usize),
    Embedding {
        table: Var,
        ids: Vec<usize>,
        padding: Option<usize>,
    },
    Sum(Var),
    Mean(Var),
    SqDist(Var, Var),
    Slice(Var, usize),
    Reshape(Var),
    Replicate(Var),
    Unfold(Var, usize),
    MaxRows(Var, Vec<usize>),
    SoftmaxXent {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// Nodes are appended in execution order; [`Tape::backward`] walks them
/// strictly in reverse. A tape is meant to live for one step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Numerically stable `softmax` of a slice.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    softmax_in_place(&mut out);
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Handles issued
    /// before the cut stay valid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Generic entry point dispatching on an [`OpKind`].
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match &kind {
            OpKind::MatMul
            | OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::SquaredDistance => 2,
            OpKind::Concat { .. } => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::invalid(format!(
                "{kind:?} takes {arity} input(s), got {}",
                inputs.len()
            )));
        }
        match kind {
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::Concat { axis } => self.concat(inputs, axis),
            OpKind::Tanh => Ok(self.tanh(inputs[0])),
            OpKind::Sigmoid => Ok(self.sigmoid(inputs[0])),
            OpKind::Relu => Ok(self.relu(inputs[0])),
            OpKind::Softmax { axis } => self.softmax(inputs[0], axis),
            OpKind::Log => Ok(self.log(inputs[0])),
            OpKind::EmbeddingLookup { ids, padding } => self.embedding(inputs[0], &ids, padding),
            OpKind::ReduceSum => Ok(self.sum(inputs[0])),
            OpKind::ReduceMean => Ok(self.mean(inputs[0])),
            OpKind::SquaredDistance => self.sq_dist(inputs[0], inputs[1]),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (ad, bd) = (self.data(a), self.data(b));
        let out = match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => {
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let row = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let x = ad[i * k + p];
                        if x != 0.0 {
                            for (o, &w) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                                *o += x * w;
                            }
                        }
                    }
                }
                Tensor::new(vec![m, n], out)?
            }
            (&[m, k], &[k2]) if k == k2 => {
                let out = (0..m)
                    .map(|i| dot(&ad[i * k..(i + 1) * k], bd))
                    .collect();
                Tensor::new(vec![m], out)?
            }
            (&[k], &[k2, n]) if k == k2 => {
                let mut out = vec![0.0; n];
                for p in 0..k {
                    let x = ad[p];
                    for (o, &w) in out.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                        *o += x * w;
                    }
                }
                Tensor::new(vec![n], out)?
            }
            _ => return Err(shape_err("matmul", &sa, &sb)),
        };
        Ok(self.record(out, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.record(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Sum of any number of same-shaped tensors.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid("add_n needs at least one input"))?;
        let shape = self.shape(first).to_vec();
        let mut out = vec![0.0; self.data(first).len()];
        for &x in xs {
            if self.shape(x) != shape.as_slice() {
                return Err(shape_err("add_n", &shape, self.shape(x)));
            }
            for (o, &v) in out.iter_mut().zip(self.data(x)) {
                *o += v;
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.record(value, Op::AddN(xs.to_vec()), xs))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.map(x, |v| v + c);
        self.record(value, Op::AddScalar(x), &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.map(x, |v| v * c);
        self.record(value, Op::Scale(x, c), &[x])
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid("concat needs at least one input"))?;
        let s0 = self.shape(first).to_vec();
        let value = match (s0.len(), axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for &x in xs {
                    if self.shape(x).len() != 1 {
                        return Err(shape_err("concat", &s0, self.shape(x)));
                    }
                    data.extend_from_slice(self.data(x));
                }
                Tensor::new(vec![data.len()], data)?
            }
            (2, 0) => {
                let cols = s0[1];
                let mut data = Vec::new();
                for &x in xs {
                    let s = self.shape(x);
                    if s.len() != 2 || s[1] != cols {
                        return Err(shape_err("concat", &s0, s));
                    }
                    data.extend_from_slice(self.data(x));
                }
                Tensor::new(vec![data.len() / cols, cols], data)?
            }
            (2, 1) => {
                let rows = s0[0];
                let mut total = 0;
                for &x in xs {
                    let s = self.shape(x);
                    if s.len() != 2 || s[0] != rows {
                        return Err(shape_err("concat", &s0, s));
                    }
                    total += s[1];
                }
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for &x in xs {
                        let c = self.shape(x)[1];
                        data.extend_from_slice(&self.data(x)[r * c..(r + 1) * c]);
                    }
                }
                Tensor::new(vec![rows, total], data)?
            }
            _ => {
                return Err(Error::invalid(format!(
                    "concat: axis {axis} invalid for shape {s0:?}"
                )))
            }
        };
        Ok(self.record(value, Op::Concat(xs.to_vec(), axis), xs))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.map(x, f64::tanh);
        self.record(value, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.map(x, sigmoid);
        self.record(value, Op::Sigmoid(x), &[x])
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| v.max(0.0));
        self.record(value, Op::Relu(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.map(x, f64::ln);
        self.record(value, Op::Log(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut data = self.data(x).to_vec();
        match (shape.len(), axis) {
            (1, 0) => softmax_in_place(&mut data),
            (2, 1) => {
                for row in data.chunks_mut(shape[1]) {
                    softmax_in_place(row);
                }
            }
            (2, 0) => {
                let (rows, cols) = (shape[0], shape[1]);
                for c in 0..cols {
                    let mut col: Vec<f64> = (0..rows).map(|r| data[r * cols + c]).collect();
                    softmax_in_place(&mut col);
                    for (r, v) in col.into_iter().enumerate() {
                        data[r * cols + c] = v;
                    }
                }
            }
            _ => {
                return Err(Error::invalid(format!(
                    "softmax: axis {axis} invalid for shape {shape:?}"
                )))
            }
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.record(value, Op::Softmax(x, axis), &[x]))
    }

    /// Gathers rows of `table` (`[V,E]`) into `[ids.len(), E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], padding: Option<usize>) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        let [vocab, dim] = shape[..] else {
            return Err(shape_err("embedding-lookup", &shape, &[ids.len()]));
        };
        if ids.is_empty() {
            return Err(Error::invalid("embedding-lookup: empty id list"));
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        let td = self.data(table);
        for &id in ids {
            if id >= vocab {
                return Err(Error::invalid(format!(
                    "embedding-lookup: id {id} out of range for table {shape:?}"
                )));
            }
            if Some(id) == padding {
                data.extend(std::iter::repeat_n(0.0, dim));
            } else {
                data.extend_from_slice(&td[id * dim..(id + 1) * dim]);
            }
        }
        let value = Tensor::new(vec![ids.len(), dim], data)?;
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
            padding,
        };
        Ok(self.record(value, op, &[table]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.data(x).iter().sum());
        self.record(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let value = Tensor::scalar(d.iter().sum::<f64>() / d.len() as f64);
        self.record(value, Op::Mean(x), &[x])
    }

    /// `‖a − b‖²` as a `[1]` tensor.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("squared-l2-distance", self.shape(a), self.shape(b)));
        }
        let d: f64 = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.record(Tensor::scalar(d), Op::SqDist(a, b), &[a, b]))
    }

    /// Contiguous sub-vector `x[start..start + len]` of a rank-1 tensor.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 1 || len == 0 || start + len > shape[0] {
            return Err(shape_err("slice", shape, &[start, len]));
        }
        let value = Tensor::vector(self.data(x)[start..start + len].to_vec());
        Ok(self.record(value, Op::Slice(x, start), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape.to_vec(), self.data(x).to_vec())
            .map_err(|_| shape_err("reshape", self.shape(x), shape))?;
        Ok(self.record(value, Op::Reshape(x), &[x]))
    }

    /// Stacks `rows` copies of a rank-1 tensor into `[rows, n]`.
    pub fn replicate(&mut self, x: Var, rows: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 1 || rows == 0 {
            return Err(shape_err("replicate", shape, &[rows]));
        }
        let n = shape[0];
        let src = self.data(x);
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(src);
        }
        let value = Tensor::new(vec![rows, n], data)?;
        Ok(self.record(value, Op::Replicate(x), &[x]))
    }

    /// Sliding windows over the rows of `[T,E]`: row `p` of the result is
    /// rows `p..p+width` flattened, giving `[T - width + 1, width·E]`.
    pub fn unfold(&mut self, x: Var, width: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || width == 0 || width > shape[0] {
            return Err(shape_err("unfold", &shape, &[width]));
        }
        let (t, e) = (shape[0], shape[1]);
        let windows = t - width + 1;
        let src = self.data(x);
        let mut data = Vec::with_capacity(windows * width * e);
        for p in 0..windows {
            data.extend_from_slice(&src[p * e..(p + width) * e]);
        }
        let value = Tensor::new(vec![windows, width * e], data)?;
        Ok(self.record(value, Op::Unfold(x, width), &[x]))
    }

    /// Column-wise maximum over the rows of `[R,C]`, giving `[C]`.
    /// Ties route the gradient to the first maximal row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(shape_err("max-pool", &shape, &[]));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let src = self.data(x);
        let mut out = src[..cols].to_vec();
        let mut arg = vec![0usize; cols];
        for r in 1..rows {
            for c in 0..cols {
                let v = src[r * cols + c];
                if v > out[c] {
                    out[c] = v;
                    arg[c] = r;
                }
            }
        }
        let value = Tensor::vector(out);
        Ok(self.record(value, Op::MaxRows(x, arg), &[x]))
    }

    /// Fused `-log softmax(logits)[target]` using log-sum-exp.
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 1 || target >= shape[0] {
            return Err(shape_err("softmax-cross-entropy", shape, &[target]));
        }
        let z = self.data(logits);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[target];
        let probs = z.iter().map(|v| (v - lse).exp()).collect();
        let op = Op::SoftmaxXent {
            logits,
            target,
            probs,
        };
        Ok(self.record(Tensor::scalar(loss), op, &[logits]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("backward on an empty tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads);
            }
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                match (&node.op, g) {
                    (Op::Leaf, Some(data)) => Some(Tensor {
                        shape: node.value.shape().to_vec(),
                        data,
                    }),
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, grads),
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(buf) = self.grad_buf(grads, v) {
                        axpy(buf, 1.0, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(buf) = self.grad_buf(grads, *a) {
                    axpy(buf, 1.0, g);
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    axpy(buf, -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for ((o, &gv), &y) in buf.iter_mut().zip(g).zip(bd) {
                        *o += gv * y;
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    for ((o, &gv), &x) in buf.iter_mut().zip(g).zip(ad) {
                        *o += gv * x;
                    }
                }
            }
            Op::AddN(xs) => {
                for &x in xs {
                    if let Some(buf) = self.grad_buf(grads, x) {
                        axpy(buf, 1.0, g);
                    }
                }
            }
            Op::AddScalar(x) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    axpy(buf, 1.0, g);
                }
            }
            Op::Scale(x, c) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    axpy(buf, *c, g);
                }
            }
            Op::Concat(xs, axis) => self.concat_backward(xs, *axis, out.shape(), g, grads),
            Op::Tanh(x) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for ((o, &gv), &y) in buf.iter_mut().zip(g).zip(out.data()) {
                        *o += gv * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for ((o, &gv), &y) in buf.iter_mut().zip(g).zip(out.data()) {
                        *o += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Relu(x) => {
                let xd = self.data(*x);
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for ((o, &gv), &v) in buf.iter_mut().zip(g).zip(xd) {
                        if v > 0.0 {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Log(x) => {
                let xd = self.data(*x);
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for ((o, &gv), &v) in buf.iter_mut().zip(g).zip(xd) {
                        *o += gv / v;
                    }
                }
            }
            Op::Softmax(x, axis) => {
                let y = out.data();
                let shape = out.shape();
                // Index groups that were normalized together.
                let groups: Vec<Vec<usize>> = match (shape.len(), axis) {
                    (1, _) => vec![(0..y.len()).collect()],
                    (_, 1) => (0..shape[0])
                        .map(|r| (r * shape[1]..(r + 1) * shape[1]).collect())
                        .collect(),
                    _ => (0..shape[1])
                        .map(|c| (0..shape[0]).map(|r| r * shape[1] + c).collect())
                        .collect(),
                };
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for idx in groups {
                        let inner: f64 = idx.iter().map(|&i| g[i] * y[i]).sum();
                        for i in idx {
                            buf[i] += y[i] * (g[i] - inner);
                        }
                    }
                }
            }
            Op::Embedding {
                table,
                ids,
                padding,
            } => {
                let dim = self.shape(*table)[1];
                if let Some(buf) = self.grad_buf(grads, *table) {
                    for (row, &id) in ids.iter().enumerate() {
                        if Some(id) == *padding {
                            continue;
                        }
                        axpy(
                            &mut buf[id * dim..(id + 1) * dim],
                            1.0,
                            &g[row * dim..(row + 1) * dim],
                        );
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    buf.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    let s = g[0] / buf.len() as f64;
                    buf.iter_mut().for_each(|o| *o += s);
                }
            }
            Op::SqDist(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for ((o, &x), &y) in buf.iter_mut().zip(ad).zip(bd) {
                        *o += 2.0 * g[0] * (x - y);
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    for ((o, &x), &y) in buf.iter_mut().zip(ad).zip(bd) {
                        *o -= 2.0 * g[0] * (x - y);
                    }
                }
            }
            Op::Slice(x, start) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    axpy(&mut buf[*start..*start + g.len()], 1.0, g);
                }
            }
            Op::Reshape(x) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    axpy(buf, 1.0, g);
                }
            }
            Op::Replicate(x) => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    let n = buf.len();
                    for row in g.chunks(n) {
                        axpy(buf, 1.0, row);
                    }
                }
            }
            Op::Unfold(x, width) => {
                let e = self.shape(*x)[1];
                let span = width * e;
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for (p, row) in g.chunks(span).enumerate() {
                        axpy(&mut buf[p * e..p * e + span], 1.0, row);
                    }
                }
            }
            Op::MaxRows(x, arg) => {
                let cols = arg.len();
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for (c, &r) in arg.iter().enumerate() {
                        buf[r * cols + c] += g[c];
                    }
                }
            }
            Op::SoftmaxXent {
                logits,
                target,
                probs,
            } => {
                if let Some(buf) = self.grad_buf(grads, *logits) {
                    for (i, (o, &p)) in buf.iter_mut().zip(probs).enumerate() {
                        let y = if i == *target { 1.0 } else { 0.0 };
                        *o += g[0] * (p - y);
                    }
                }
            }
        }
    }

    fn matmul_backward(&self, a: Var, b: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (ad, bd) = (self.data(a), self.data(b));
        match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[_, n]) => {
                if let Some(buf) = self.grad_buf(grads, a) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            buf[i * k + p] += dot(gi, &bd[p * n..(p + 1) * n]);
                        }
                    }
                }
                if let Some(buf) = self.grad_buf(grads, b) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ad[i * k + p];
                            if x != 0.0 {
                                axpy(&mut buf[p * n..(p + 1) * n], x, gi);
                            }
                        }
                    }
                }
            }
            (&[m, k], &[_]) => {
                if let Some(buf) = self.grad_buf(grads, a) {
                    for i in 0..m {
                        if g[i] != 0.0 {
                            axpy(&mut buf[i * k..(i + 1) * k], g[i], bd);
                        }
                    }
                }
                if let Some(buf) = self.grad_buf(grads, b) {
                    for i in 0..m {
                        if g[i] != 0.0 {
                            axpy(buf, g[i], &ad[i * k..(i + 1) * k]);
                        }
                    }
                }
            }
            (&[k], &[_, n]) => {
                if let Some(buf) = self.grad_buf(grads, a) {
                    for p in 0..k {
                        buf[p] += dot(g, &bd[p * n..(p + 1) * n]);
                    }
                }
                if let Some(buf) = self.grad_buf(grads, b) {
                    for p in 0..k {
                        if ad[p] != 0.0 {
                            axpy(&mut buf[p * n..(p + 1) * n], ad[p], g);
                        }
                    }
                }
            }
            _ => unreachable!("matmul shapes validated in forward"),
        }
    }

    fn concat_backward(
        &self,
        xs: &[Var],
        axis: usize,
        out_shape: &[usize],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        if out_shape.len() == 2 && axis == 1 {
            let (rows, total) = (out_shape[0], out_shape[1]);
            let mut offset = 0;
            for &x in xs {
                let c = self.shape(x)[1];
                if let Some(buf) = self.grad_buf(grads, x) {
                    for r in 0..rows {
                        axpy(
                            &mut buf[r * c..(r + 1) * c],
                            1.0,
                            &g[r * total + offset..r * total + offset + c],
                        );
                    }
                }
                offset += c;
            }
        } else {
            let mut offset = 0;
            for &x in xs {
                let n = self.nodes[x.0].value.len();
                if let Some(buf) = self.grad_buf(grads, x) {
                    axpy(buf, 1.0, &g[offset..offset + n]);
                }
                offset += n;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

/// Gradients of a scalar with respect to every leaf of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for a leaf; zero if the leaf does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(t)) => t.clone(),
            _ => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(t) => t,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn tanh_at_origin() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0]));
        let y = t.apply(OpKind::Tanh, &[x]).unwrap();
        assert_eq!(t.value(y).data(), &[0.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = t.apply(OpKind::Softmax { axis: 0 }, &[x]).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_matmul() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = t.constant(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = t.apply(OpKind::MatMul, &[i, m]).unwrap();
        assert_eq!(t.value(y).shape(), &[2, 2]);
        assert_eq!(t.value(y).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn square_has_derivative_six_at_three() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).data(), &[6.0]);
    }

    #[test]
    fn xent_gradient_is_softmax_minus_onehot() {
        let mut t = Tape::new();
        let z = t.leaf(Tensor::vector(vec![0.3, -1.2, 2.0, 0.5]));
        let l = t.softmax_xent(z, 2).unwrap();
        let g = t.backward(l).unwrap();
        let mut expect = softmax(&[0.3, -1.2, 2.0, 0.5]);
        expect[2] -= 1.0;
        assert!(close(g.get(z).data(), &expect, 1e-15));
    }

    #[test]
    fn shape_errors_name_the_op_and_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = t.constant(Tensor::zeros(&[3]));
        let err = t.add(a, c).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn unknown_op_kind_is_rejected() {
        assert!(matches!("conv3d".parse::<OpKind>(), Err(Error::UnknownOp(_))));
        assert_eq!("concat(1)".parse::<OpKind>().unwrap(), OpKind::Concat { axis: 1 });
        assert_eq!("softmax".parse::<OpKind>().unwrap(), OpKind::Softmax { axis: 0 });
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = t.tanh(x);
        assert!(t.backward(y).is_err());
        assert!(Tape::new().backward(Var(0)).is_err());
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = t.leaf(Tensor::zeros(&[3]));
        let y = t.sum(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(unused).data(), &[0.0; 3]);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1000.0, 0.0, -1000.0]));
        let y = t.softmax(x, 0).unwrap();
        assert!(t.value(y).is_finite());
        let l = t.softmax_xent(x, 2).unwrap();
        assert!((t.value(l).data()[0] - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn padding_rows_are_zero_and_get_no_gradient() {
        let mut t = Tape::new();
        let table = t.leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let e = t.embedding(table, &[0, 2, 2], Some(0)).unwrap();
        assert_eq!(t.value(e).data(), &[0.0, 0.0, 5.0, 6.0, 5.0, 6.0]);
        let s = t.sum(e);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(table).data(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn truncate_keeps_earlier_handles() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let mark = t.len();
        let _ = t.scale(x, 3.0);
        t.truncate(mark);
        let y = t.mul(x, x).unwrap();
        assert_eq!(t.value(y).data(), &[4.0]);
        assert_eq!(t.len(), 2);
    }
}
