use std::sync::Arc;

use super::kernels;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Sqrt(Var),
    SumAll(Var),
    Expand(Var, Vec<usize>),
    ColSum(Var),
    BroadcastRows(Var, usize),
    RowSum(Var),
    BroadcastCols(Var, usize),
    ChannelSum(Var),
    BroadcastChannels(Var, Vec<usize>),
    Conv2d(Var, Var),
    Conv2dInputGrad(Var, Var),
    Conv2dWeightGrad(Var, Var, [usize; 2]),
    AvgPool2(Var),
    Unpool2(Var, Vec<usize>),
    Reshape(Var, Vec<usize>),
    Relu(Var),
    /// Upstream gradient masked by the sign of the pre-activation. The mask
    /// has zero derivative, so only the first operand is differentiable.
    ReluGrad(Var, Var),
    Softmax(Var),
    LogSumExp(Var),
    Pick(Var, Arc<[usize]>),
    Scatter(Var, Arc<[usize]>, usize),
    SelectRows(Var, Arc<[usize]>),
    ScatterRows(Var, Arc<[usize]>, usize),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Sqrt(_) => "sqrt",
            Op::SumAll(_) => "sum",
            Op::Expand(..) => "expand",
            Op::ColSum(_) => "col_sum",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::RowSum(_) => "row_sum",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::ChannelSum(_) => "channel_sum",
            Op::BroadcastChannels(..) => "broadcast_channels",
            Op::Conv2d(..) => "conv2d",
            Op::Conv2dInputGrad(..) => "conv2d_input_grad",
            Op::Conv2dWeightGrad(..) => "conv2d_weight_grad",
            Op::AvgPool2(_) => "avg_pool2",
            Op::Unpool2(..) => "unpool2",
            Op::Reshape(..) => "reshape",
            Op::Relu(_) => "relu",
            Op::ReluGrad(..) => "relu_grad",
            Op::Softmax(_) => "softmax",
            Op::LogSumExp(_) => "logsumexp",
            Op::Pick(..) => "pick",
            Op::Scatter(..) => "scatter",
            Op::SelectRows(..) => "select_rows",
            Op::ScatterRows(..) => "scatter_rows",
        }
    }

    pub(crate) fn parents(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf | Constant => [None, None],
            MatMul(a, b)
            | Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | Div(a, b)
            | Conv2d(a, b)
            | Conv2dInputGrad(a, b)
            | Conv2dWeightGrad(a, b, _)
            | ReluGrad(a, b) => [Some(a), Some(b)],
            Transpose(a)
            | Scale(a, _)
            | Sqrt(a)
            | SumAll(a)
            | Expand(a, _)
            | ColSum(a)
            | BroadcastRows(a, _)
            | RowSum(a)
            | BroadcastCols(a, _)
            | ChannelSum(a)
            | BroadcastChannels(a, _)
            | AvgPool2(a)
            | Unpool2(a, _)
            | Reshape(a, _)
            | Relu(a)
            | Softmax(a)
            | LogSumExp(a)
            | Pick(a, _)
            | Scatter(a, _, _)
            | SelectRows(a, _)
            | ScatterRows(a, _, _) => [Some(a), None],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    /// Depends on a gradient that was materialized without recording.
    detached: bool,
}

/// Operation-recording tape. Values are computed eagerly as nodes are added;
/// node ids are a topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

type Check = std::result::Result<Tensor, String>;

fn same_shape(a: &Tensor, b: &Tensor) -> std::result::Result<(), String> {
    if a.shape() != b.shape() {
        return Err(format!("operand shapes {:?} and {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn rank(t: &Tensor, r: usize, what: &str) -> std::result::Result<(), String> {
    if t.shape().len() != r {
        return Err(format!("{what} must be rank {r}, got {:?}", t.shape()));
    }
    Ok(())
}

fn eval<'a>(op: &Op, val: impl Fn(Var) -> &'a Tensor) -> Check {
    use Op::*;
    Ok(match op {
        Leaf | Constant => unreachable!("leaves are not evaluated"),
        MatMul(a, b) => {
            let (a, b) = (val(*a), val(*b));
            rank(a, 2, "lhs")?;
            rank(b, 2, "rhs")?;
            if a.shape()[1] != b.shape()[0] {
                return Err(format!("inner extents {:?} x {:?}", a.shape(), b.shape()));
            }
            kernels::matmul(a, b)
        }
        Transpose(a) => {
            let a = val(*a);
            rank(a, 2, "operand")?;
            kernels::transpose(a)
        }
        Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => {
            let (x, y) = (val(*a), val(*b));
            same_shape(x, y)?;
            match op {
                Add(..) => x.zip_map(y, |p, q| p + q),
                Sub(..) => x.zip_map(y, |p, q| p - q),
                Mul(..) => x.zip_map(y, |p, q| p * q),
                _ => x.zip_map(y, |p, q| p / q),
            }
        }
        Scale(a, c) => val(*a).scale(*c),
        Sqrt(a) => val(*a).map(f64::sqrt),
        SumAll(a) => Tensor::scalar(val(*a).sum()),
        Expand(a, shape) => {
            let a = val(*a);
            if a.len() != 1 {
                return Err(format!("expand needs a single element, got {:?}", a.shape()));
            }
            Tensor::full(shape, a.item())
        }
        ColSum(a) => {
            let a = val(*a);
            rank(a, 2, "operand")?;
            kernels::col_sum(a)
        }
        BroadcastRows(a, n) => {
            let a = val(*a);
            rank(a, 1, "operand")?;
            kernels::broadcast_rows(a, *n)
        }
        RowSum(a) => {
            let a = val(*a);
            rank(a, 2, "operand")?;
            kernels::row_sum(a)
        }
        BroadcastCols(a, m) => {
            let a = val(*a);
            rank(a, 1, "operand")?;
            kernels::broadcast_cols(a, *m)
        }
        ChannelSum(a) => {
            let a = val(*a);
            rank(a, 4, "operand")?;
            kernels::channel_sum(a)
        }
        BroadcastChannels(a, shape) => {
            let a = val(*a);
            rank(a, 1, "operand")?;
            if shape.len() != 4 || shape[1] != a.len() {
                return Err(format!("cannot broadcast {:?} over channels of {shape:?}", a.shape()));
            }
            kernels::broadcast_channels(a, shape)
        }
        Conv2d(x, w) => {
            let (x, w) = (val(*x), val(*w));
            rank(x, 4, "input")?;
            rank(w, 4, "kernel")?;
            check_kernel(w)?;
            if x.shape()[1] != w.shape()[1] {
                return Err(format!(
                    "input has {} channels, kernel expects {}",
                    x.shape()[1],
                    w.shape()[1]
                ));
            }
            kernels::conv2d(x, w)
        }
        Conv2dInputGrad(gy, w) => {
            let (gy, w) = (val(*gy), val(*w));
            rank(gy, 4, "output gradient")?;
            rank(w, 4, "kernel")?;
            check_kernel(w)?;
            if gy.shape()[1] != w.shape()[0] {
                return Err(format!(
                    "gradient has {} channels, kernel produces {}",
                    gy.shape()[1],
                    w.shape()[0]
                ));
            }
            kernels::conv2d_input_grad(gy, w)
        }
        Conv2dWeightGrad(x, gy, k) => {
            let (x, gy) = (val(*x), val(*gy));
            rank(x, 4, "input")?;
            rank(gy, 4, "output gradient")?;
            if x.shape()[0] != gy.shape()[0] || x.shape()[2..] != gy.shape()[2..] {
                return Err(format!("input {:?} vs output gradient {:?}", x.shape(), gy.shape()));
            }
            if k[0] % 2 == 0 || k[1] % 2 == 0 {
                return Err(format!("kernel extents {k:?} must be odd"));
            }
            kernels::conv2d_weight_grad(x, gy, *k)
        }
        AvgPool2(a) => {
            let a = val(*a);
            rank(a, 4, "operand")?;
            if a.shape()[2] < 2 || a.shape()[3] < 2 {
                return Err(format!("spatial extent too small to pool: {:?}", a.shape()));
            }
            kernels::avg_pool2(a)
        }
        Unpool2(a, target) => {
            let a = val(*a);
            rank(a, 4, "operand")?;
            let s = a.shape();
            if target.len() != 4
                || target[..2] != s[..2]
                || target[2] / 2 != s[2]
                || target[3] / 2 != s[3]
            {
                return Err(format!("cannot unpool {s:?} into {target:?}"));
            }
            kernels::unpool2(a, target)
        }
        Reshape(a, shape) => {
            let a = val(*a);
            a.reshape(shape).map_err(|e| e.to_string())?
        }
        Relu(a) => val(*a).map(|v| if v > 0.0 { v } else { 0.0 }),
        ReluGrad(g, x) => {
            let (g, x) = (val(*g), val(*x));
            same_shape(g, x)?;
            g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })
        }
        Softmax(a) => {
            let a = val(*a);
            rank(a, 2, "operand")?;
            kernels::softmax_rows(a)
        }
        LogSumExp(a) => {
            let a = val(*a);
            rank(a, 2, "operand")?;
            kernels::logsumexp_rows(a)
        }
        Pick(a, labels) => {
            let a = val(*a);
            rank(a, 2, "operand")?;
            let (n, m) = (a.shape()[0], a.shape()[1]);
            check_index(labels, n, m)?;
            Tensor::vector(labels.iter().enumerate().map(|(i, &l)| a.data()[i * m + l]).collect())
        }
        Scatter(a, labels, m) => {
            let a = val(*a);
            rank(a, 1, "operand")?;
            let n = a.len();
            check_index(labels, n, *m)?;
            let mut out = vec![0.0; n * m];
            for (i, &l) in labels.iter().enumerate() {
                out[i * m + l] = a.data()[i];
            }
            Tensor::raw(vec![n, *m], out)
        }
        SelectRows(a, idx) => {
            let a = val(*a);
            if a.shape().is_empty() || idx.iter().any(|&i| i >= a.shape()[0]) {
                return Err(format!("row index out of range for {:?}", a.shape()));
            }
            a.select_rows(idx)
        }
        ScatterRows(a, idx, n) => {
            let a = val(*a);
            if a.shape().is_empty() || a.shape()[0] != idx.len() || idx.iter().any(|&i| i >= *n) {
                return Err(format!("cannot scatter {:?} into {n} rows", a.shape()));
            }
            let row_len: usize = a.shape()[1..].iter().product();
            let mut out = vec![0.0; n * row_len];
            for (r, &i) in idx.iter().enumerate() {
                for k in 0..row_len {
                    out[i * row_len + k] += a.data()[r * row_len + k];
                }
            }
            let mut shape = a.shape().to_vec();
            shape[0] = *n;
            Tensor::raw(shape, out)
        }
    })
}

fn check_kernel(w: &Tensor) -> std::result::Result<(), String> {
    let s = w.shape();
    if s[2].is_multiple_of(2) || s[3].is_multiple_of(2) {
        return Err(format!("kernel extents {:?} must be odd", &s[2..]));
    }
    Ok(())
}

fn check_index(labels: &[usize], n: usize, m: usize) -> std::result::Result<(), String> {
    if labels.len() != n {
        return Err(format!("{} labels for {n} rows", labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= m) {
        return Err(format!("label {l} out of range for {m} columns"));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(Op::Leaf, value, false)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(Op::Constant, value, false)
    }

    fn push_raw(&mut self, op: Op, value: Tensor, detached: bool) -> Var {
        self.nodes.push(Node { op, value, detached });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let id = self.nodes.len();
        let value = eval(&op, |v| &self.nodes[v.0].value).map_err(|detail| Error::Shape {
            node: id,
            op: op.name(),
            detail,
        })?;
        let detached = op
            .parents()
            .iter()
            .flatten()
            .any(|p| self.nodes[p.0].detached);
        Ok(self.push_raw(op, value, detached))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a, b))
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sqrt(a))
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SumAll(a))
    }
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Expand(a, shape.to_vec()))
    }
    pub fn col_sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::ColSum(a))
    }
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        self.push(Op::BroadcastRows(a, n))
    }
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::RowSum(a))
    }
    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Result<Var> {
        self.push(Op::BroadcastCols(a, m))
    }
    pub fn channel_sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::ChannelSum(a))
    }
    pub fn broadcast_channels(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::BroadcastChannels(a, shape.to_vec()))
    }
    /// 2-D cross-correlation with odd square-or-rectangular kernels, unit
    /// stride and same padding.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        self.push(Op::Conv2d(x, w))
    }
    pub fn conv2d_input_grad(&mut self, gy: Var, w: Var) -> Result<Var> {
        self.push(Op::Conv2dInputGrad(gy, w))
    }
    pub fn conv2d_weight_grad(&mut self, x: Var, gy: Var, kernel: [usize; 2]) -> Result<Var> {
        self.push(Op::Conv2dWeightGrad(x, gy, kernel))
    }
    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        self.push(Op::AvgPool2(a))
    }
    pub fn unpool2(&mut self, a: Var, target: &[usize]) -> Result<Var> {
        self.push(Op::Unpool2(a, target.to_vec()))
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape(a, shape.to_vec()))
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }
    pub fn relu_grad(&mut self, g: Var, x: Var) -> Result<Var> {
        self.push(Op::ReluGrad(g, x))
    }
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Softmax(a))
    }
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::LogSumExp(a))
    }
    pub fn pick(&mut self, a: Var, labels: Arc<[usize]>) -> Result<Var> {
        self.push(Op::Pick(a, labels))
    }
    pub fn scatter(&mut self, a: Var, labels: Arc<[usize]>, cols: usize) -> Result<Var> {
        self.push(Op::Scatter(a, labels, cols))
    }
    pub fn select_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        self.push(Op::SelectRows(a, idx))
    }
    pub fn scatter_rows(&mut self, a: Var, idx: Arc<[usize]>, rows: usize) -> Result<Var> {
        self.push(Op::ScatterRows(a, idx, rows))
    }

    /// `Σ a ⊙ b`
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let sq = self.dot(a, a)?;
        self.sqrt(sq)
    }

    /// Dense layer: `x·w + b` with x: [n, in], w: [in, out], b: [out].
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        let n = self.shape(y)[0];
        let bb = self.broadcast_rows(b, n)?;
        self.add(y, bb)
    }

    /// Mean softmax cross-entropy of logits [n, classes] against labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Arc<[usize]>) -> Result<Var> {
        let n = self.shape(logits).first().copied().unwrap_or(0);
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let lse = self.logsumexp(logits)?;
        let picked = self.pick(logits, labels)?;
        let per_example = self.sub(lse, picked)?;
        let total = self.sum(per_example)?;
        self.scale(total, 1.0 / n as f64)
    }

    /// Re-evaluate the recorded computation with some leaves or constants
    /// rebound. Materialized (detached) gradients keep their recorded values.
    pub fn replay(&self, bindings: &[(Var, Tensor)]) -> Result<Graph> {
        let mut out = Graph {
            nodes: Vec::with_capacity(self.nodes.len()),
        };
        for (id, node) in self.nodes.iter().enumerate() {
            let bound = bindings.iter().find(|(v, _)| v.0 == id);
            let value = match (&node.op, bound) {
                (Op::Leaf | Op::Constant, Some((_, t))) => {
                    if t.shape() != node.value.shape() {
                        return Err(Error::Shape {
                            node: id,
                            op: node.op.name(),
                            detail: format!(
                                "binding shape {:?} differs from recorded {:?}",
                                t.shape(),
                                node.value.shape()
                            ),
                        });
                    }
                    t.clone()
                }
                (_, Some(_)) => {
                    return Err(Error::Shape {
                        node: id,
                        op: node.op.name(),
                        detail: "only leaves and constants can be bound".into(),
                    })
                }
                (Op::Leaf | Op::Constant, None) => node.value.clone(),
                (op, None) => eval(op, |v| &out.nodes[v.0].value).map_err(|detail| {
                    Error::Shape {
                        node: id,
                        op: op.name(),
                        detail,
                    }
                })?,
            };
            out.nodes.push(Node {
                op: node.op.clone(),
                value,
                detached: node.detached,
            });
        }
        Ok(out)
    }

    /// Evaluate `output` under new leaf bindings without touching `self`.
    pub fn forward(&self, output: Var, bindings: &[(Var, Tensor)]) -> Result<Tensor> {
        Ok(self.replay(bindings)?.value(output).clone())
    }

    /// Reverse-mode gradient of the scalar `output` with respect to `wrt`.
    ///
    /// With `create_graph` the backward pass is itself recorded, so the
    /// returned gradients can be differentiated again. Otherwise the
    /// backward nodes are discarded and the results come back as detached
    /// constants.
    pub fn gradient(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let out_val = self.value(output);
        if !out_val.is_scalar() {
            return Err(Error::NonScalarOutput(out_val.shape().to_vec()));
        }
        let mark = self.nodes.len();
        let relevant = self.relevant(output, wrt);

        let mut adj: Vec<Option<Var>> = vec![None; output.0 + 1];
        let seed = Tensor::full(self.shape(output), 1.0);
        adj[output.0] = Some(self.constant(seed));

        for id in (0..=output.0).rev() {
            if !relevant[id] {
                continue;
            }
            let Some(g) = adj[id] else { continue };
            let op = self.nodes[id].op.clone();
            let y = Var(id);
            for (slot, parent) in op.parents().iter().enumerate() {
                let Some(p) = *parent else { continue };
                if !relevant[p.0] {
                    continue;
                }
                let Some(contrib) = self.vjp(&op, y, slot, g)? else { continue };
                adj[p.0] = Some(match adj[p.0] {
                    Some(acc) => self.add(acc, contrib)?,
                    None => contrib,
                });
            }
        }

        let mut result = Vec::with_capacity(wrt.len());
        if create_graph {
            for w in wrt {
                let v = match adj.get(w.0).copied().flatten() {
                    Some(v) => v,
                    None => {
                        let z = Tensor::zeros(self.shape(*w));
                        self.constant(z)
                    }
                };
                result.push(v);
            }
        } else {
            let values: Vec<Tensor> = wrt
                .iter()
                .map(|w| match adj.get(w.0).copied().flatten() {
                    Some(v) => self.value(v).clone(),
                    None => Tensor::zeros(self.shape(*w)),
                })
                .collect();
            self.nodes.truncate(mark);
            for v in values {
                result.push(self.push_raw(Op::Constant, v, true));
            }
        }
        Ok(result)
    }

    /// Gradient of a scalar built from recorded gradients, with respect to
    /// input-side leaves. Fails if a leaf is cut off from `output` only
    /// because an intermediate gradient was materialized without recording.
    pub fn higher_gradient(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        if self.nodes[output.0].detached {
            let ancestors = self.ancestors(output);
            if let Some(w) = wrt.iter().find(|w| !ancestors[w.0]) {
                return Err(Error::DetachedGradient(w.0));
            }
        }
        let grads = self.gradient(output, wrt, false)?;
        let out = grads.iter().map(|g| self.value(*g).clone()).collect();
        Ok(out)
    }

    fn ancestors(&self, output: Var) -> Vec<bool> {
        let mut anc = vec![false; output.0 + 1];
        anc[output.0] = true;
        for id in (0..=output.0).rev() {
            if !anc[id] {
                continue;
            }
            for p in self.nodes[id].op.parents().into_iter().flatten() {
                anc[p.0] = true;
            }
        }
        anc
    }

    /// Nodes on some path from a `wrt` node to `output`.
    fn relevant(&self, output: Var, wrt: &[Var]) -> Vec<bool> {
        let mut rel = self.ancestors(output);
        let mut reaches = vec![false; output.0 + 1];
        for w in wrt {
            if w.0 <= output.0 {
                reaches[w.0] = true;
            }
        }
        let start = wrt.iter().map(|w| w.0).min().unwrap_or(output.0 + 1);
        for id in start..=output.0 {
            if reaches[id] {
                continue;
            }
            reaches[id] = self.nodes[id]
                .op
                .parents()
                .into_iter()
                .flatten()
                .any(|p| reaches[p.0]);
        }
        for (r, d) in rel.iter_mut().zip(&reaches) {
            *r &= *d;
        }
        rel
    }

    /// Contribution of node `y`'s adjoint `g` to the parent in `slot`.
    fn vjp(&mut self, op: &Op, y: Var, slot: usize, g: Var) -> Result<Option<Var>> {
        use Op::*;
        let v = match (op, slot) {
            (MatMul(_, b), 0) => {
                let bt = self.transpose(*b)?;
                self.matmul(g, bt)?
            }
            (MatMul(a, _), _) => {
                let at = self.transpose(*a)?;
                self.matmul(at, g)?
            }
            (Transpose(_), _) => self.transpose(g)?,
            (Add(..), _) => g,
            (Sub(..), 0) => g,
            (Sub(..), _) => self.scale(g, -1.0)?,
            (Mul(_, b), 0) => self.mul(g, *b)?,
            (Mul(a, _), _) => self.mul(g, *a)?,
            (Div(_, b), 0) => self.div(g, *b)?,
            (Div(_, b), _) => {
                let q = self.div(g, *b)?;
                let t = self.mul(q, y)?;
                self.scale(t, -1.0)?
            }
            (Scale(_, c), _) => self.scale(g, *c)?,
            (Sqrt(_), _) => {
                let two_y = self.scale(y, 2.0)?;
                self.div(g, two_y)?
            }
            (SumAll(a), _) => {
                let shape = self.shape(*a).to_vec();
                self.expand(g, &shape)?
            }
            (Expand(a, _), _) => {
                let s = self.sum(g)?;
                let shape = self.shape(*a).to_vec();
                if shape.is_empty() {
                    s
                } else {
                    self.reshape(s, &shape)?
                }
            }
            (ColSum(a), _) => {
                let n = self.shape(*a)[0];
                self.broadcast_rows(g, n)?
            }
            (BroadcastRows(..), _) => self.col_sum(g)?,
            (RowSum(a), _) => {
                let m = self.shape(*a)[1];
                self.broadcast_cols(g, m)?
            }
            (BroadcastCols(..), _) => self.row_sum(g)?,
            (ChannelSum(a), _) => {
                let shape = self.shape(*a).to_vec();
                self.broadcast_channels(g, &shape)?
            }
            (BroadcastChannels(..), _) => self.channel_sum(g)?,
            (Conv2d(_, w), 0) => self.conv2d_input_grad(g, *w)?,
            (Conv2d(x, w), _) => {
                let k = kernel_extent(self.shape(*w));
                self.conv2d_weight_grad(*x, g, k)?
            }
            (Conv2dInputGrad(_, w), 0) => self.conv2d(g, *w)?,
            (Conv2dInputGrad(gy, w), _) => {
                let k = kernel_extent(self.shape(*w));
                self.conv2d_weight_grad(g, *gy, k)?
            }
            (Conv2dWeightGrad(x, _, _), 1) => self.conv2d(*x, g)?,
            (Conv2dWeightGrad(_, gy, _), _) => self.conv2d_input_grad(*gy, g)?,
            (AvgPool2(a), _) => {
                let shape = self.shape(*a).to_vec();
                self.unpool2(g, &shape)?
            }
            (Unpool2(..), _) => self.avg_pool2(g)?,
            (Reshape(a, _), _) => {
                let shape = self.shape(*a).to_vec();
                self.reshape(g, &shape)?
            }
            (Relu(a), _) => self.relu_grad(g, *a)?,
            (ReluGrad(_, x), 0) => self.relu_grad(g, *x)?,
            (ReluGrad(..), _) => return Ok(None),
            (Softmax(_), _) => {
                let m = self.shape(y)[1];
                let gs = self.mul(g, y)?;
                let rs = self.row_sum(gs)?;
                let b = self.broadcast_cols(rs, m)?;
                let centered = self.sub(g, b)?;
                self.mul(y, centered)?
            }
            (LogSumExp(a), _) => {
                let m = self.shape(*a)[1];
                let s = self.softmax(*a)?;
                let b = self.broadcast_cols(g, m)?;
                self.mul(s, b)?
            }
            (Pick(a, labels), _) => {
                let m = self.shape(*a)[1];
                self.scatter(g, labels.clone(), m)?
            }
            (Scatter(_, labels, _), _) => self.pick(g, labels.clone())?,
            (SelectRows(a, idx), _) => {
                let n = self.shape(*a)[0];
                self.scatter_rows(g, idx.clone(), n)?
            }
            (ScatterRows(_, idx, _), _) => self.select_rows(g, idx.clone())?,
            (Leaf | Constant, _) => return Ok(None),
        };
        Ok(Some(v))
    }
}

fn kernel_extent(w: &[usize]) -> [usize; 2] {
    [w[2], w[3]]
}
