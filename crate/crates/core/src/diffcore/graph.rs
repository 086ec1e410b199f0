//! Define-then-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in construction order, which is also a valid
//! topological order: an op can only reference nodes that already exist.
//! [`Graph::evaluate`] walks forward over that order and caches every value;
//! [`Graph::backward`] walks the same order in reverse, so gradient
//! accumulation at fan-out nodes always happens in the same sequence.

use std::collections::BTreeMap;

use super::{DiffError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { requires_grad: bool },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// `x + row`, with `row` repeated along every leading axis of `x`.
    BroadcastAdd(NodeId, NodeId),
    Relu(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Log(NodeId),
    Scale(NodeId, f64),
    ClampMin(NodeId, f64),
    Concat { inputs: Vec<NodeId>, axis: usize },
    /// Contiguous run of the flat buffer starting at `start`, viewed as `shape`.
    Slice { input: NodeId, start: usize, shape: Vec<usize> },
    Reshape { input: NodeId, shape: Vec<usize> },
    ReduceSum { input: NodeId, axis: Option<usize> },
    ReduceMean { input: NodeId, axis: Option<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::BroadcastAdd(..) => "broadcast-add",
            Op::Relu(_) => "relu",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Log(_) => "log",
            Op::Scale(..) => "scale",
            Op::ClampMin(..) => "clamp-min",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape { .. } => "reshape",
            Op::ReduceSum { .. } => "reduce-sum",
            Op::ReduceMean { .. } => "reduce-mean",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf { .. } => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::BroadcastAdd(a, b) => vec![*a, *b],
            Op::Relu(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Log(a)
            | Op::Scale(a, _)
            | Op::ClampMin(a, _) => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Slice { input, .. }
            | Op::Reshape { input, .. }
            | Op::ReduceSum { input, .. }
            | Op::ReduceMean { input, .. } => vec![*input],
        }
    }
}

/// Gradients of a scalar loss with respect to the graph's trainable leaves.
#[derive(Debug, Default)]
pub struct Gradients {
    map: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.map.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Removes and returns the gradient for `id`; a trainable leaf that the
    /// loss does not depend on yields zeros of `shape`.
    pub fn take_or_zeros(&mut self, id: NodeId, shape: &[usize]) -> Tensor {
        self.map.remove(&id).unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }
}

#[derive(Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Option<Tensor>>,
    /// Nodes `[0, evaluated)` have a validated value.
    evaluated: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, value: Option<Tensor>) -> NodeId {
        for input in op.inputs() {
            assert!(input.0 < self.ops.len(), "node {} does not belong to this graph", input.0);
        }
        self.ops.push(op);
        self.values.push(value);
        NodeId(self.ops.len() - 1)
    }

    /// Constant input; no gradient is produced for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { requires_grad: false }, Some(value))
    }

    /// Trainable input; `backward` reports its gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { requires_grad: true }, Some(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b), None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b), None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b), None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b), None)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b), None)
    }

    pub fn broadcast_add(&mut self, x: NodeId, row: NodeId) -> NodeId {
        self.push(Op::BroadcastAdd(x, row), None)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a), None)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sin(a), None)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Cos(a), None)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a), None)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sqrt(a), None)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a), None)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor), None)
    }

    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> NodeId {
        self.push(Op::ClampMin(a, floor), None)
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> NodeId {
        self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            None,
        )
    }

    pub fn slice(&mut self, input: NodeId, start: usize, shape: &[usize]) -> NodeId {
        self.push(
            Op::Slice {
                input,
                start,
                shape: shape.to_vec(),
            },
            None,
        )
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> NodeId {
        self.push(
            Op::Reshape {
                input,
                shape: shape.to_vec(),
            },
            None,
        )
    }

    pub fn reduce_sum(&mut self, input: NodeId, axis: Option<usize>) -> NodeId {
        self.push(Op::ReduceSum { input, axis }, None)
    }

    pub fn reduce_mean(&mut self, input: NodeId, axis: Option<usize>) -> NodeId {
        self.push(Op::ReduceMean { input, axis }, None)
    }

    /// Cached value of a node, if it has been evaluated (leaves always are).
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values.get(id.0).and_then(Option::as_ref)
    }

    /// Evaluates every node up to and including `output`.
    ///
    /// Already-evaluated nodes are not recomputed, so a graph can be extended
    /// and evaluated again.
    pub fn evaluate(&mut self, output: NodeId) -> Result<&Tensor, DiffError> {
        if output.0 >= self.ops.len() {
            return Err(DiffError::UnknownNode(output.0));
        }
        for idx in self.evaluated..=output.0 {
            if self.values[idx].is_none() {
                let value = self.compute(idx)?;
                self.values[idx] = Some(value);
            }
            let value = self.values[idx].as_ref().expect("value just computed");
            if !value.all_finite() {
                return Err(DiffError::NonFinite {
                    node: idx,
                    op: self.ops[idx].name(),
                });
            }
            self.evaluated = idx + 1;
        }
        Ok(self.values[output.0].as_ref().expect("evaluated"))
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.values[id.0].as_ref().expect("inputs are evaluated before their consumers")
    }

    fn mismatch(&self, idx: usize, inputs: &[NodeId]) -> DiffError {
        DiffError::ShapeMismatch {
            node: idx,
            op: self.ops[idx].name(),
            shapes: inputs.iter().map(|&i| self.val(i).shape().to_vec()).collect(),
        }
    }

    fn compute(&self, idx: usize) -> Result<Tensor, DiffError> {
        let op = &self.ops[idx];
        match op {
            Op::Leaf { .. } => unreachable!("leaves are bound at construction"),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
                    return Err(self.mismatch(idx, &[*a, *b]));
                }
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, av.data(), false, bv.data(), false, &mut out);
                Tensor::new(&[m, n], out)
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if av.shape() != bv.shape() {
                    return Err(self.mismatch(idx, &[*a, *b]));
                }
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add(..) => |x, y| x + y,
                    Op::Sub(..) => |x, y| x - y,
                    Op::Mul(..) => |x, y| x * y,
                    _ => |x, y| x / y,
                };
                let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(av.shape(), out)
            }
            Op::BroadcastAdd(x, row) => {
                let (xv, rv) = (self.val(*x), self.val(*row));
                let width = rv.numel();
                if xv.rank() == 0 || xv.shape()[xv.rank() - 1] != width {
                    return Err(self.mismatch(idx, &[*x, *row]));
                }
                let r = rv.data();
                let mut out = xv.data().to_vec();
                for chunk in out.chunks_exact_mut(width) {
                    for (o, b) in chunk.iter_mut().zip(r) {
                        *o += b;
                    }
                }
                Tensor::new(xv.shape(), out)
            }
            Op::Relu(a) => Ok(map(self.val(*a), |x| if x > 0.0 { x } else { 0.0 })),
            Op::Sin(a) => Ok(map(self.val(*a), f64::sin)),
            Op::Cos(a) => Ok(map(self.val(*a), f64::cos)),
            Op::Square(a) => Ok(map(self.val(*a), |x| x * x)),
            Op::Sqrt(a) => Ok(map(self.val(*a), f64::sqrt)),
            Op::Log(a) => Ok(map(self.val(*a), f64::ln)),
            Op::Scale(a, c) => {
                let c = *c;
                Ok(map(self.val(*a), |x| c * x))
            }
            Op::ClampMin(a, floor) => {
                let floor = *floor;
                Ok(map(self.val(*a), |x| if x > floor { x } else { floor }))
            }
            Op::Concat { inputs, axis } => {
                let first = self.val(inputs[0]).shape().to_vec();
                if *axis >= first.len() {
                    return Err(self.mismatch(idx, inputs));
                }
                let mut out_shape = first.clone();
                out_shape[*axis] = 0;
                for &i in inputs {
                    let s = self.val(i).shape();
                    let compatible = s.len() == first.len()
                        && s.iter().zip(&first).enumerate().all(|(d, (x, y))| d == *axis || x == y);
                    if !compatible {
                        return Err(self.mismatch(idx, inputs));
                    }
                    out_shape[*axis] += s[*axis];
                }
                let outer: usize = first[..*axis].iter().product();
                let mut out = Vec::with_capacity(out_shape.iter().product());
                for o in 0..outer {
                    for &i in inputs {
                        let v = self.val(i);
                        let inner = v.numel() / outer;
                        out.extend_from_slice(&v.data()[o * inner..(o + 1) * inner]);
                    }
                }
                Tensor::new(&out_shape, out)
            }
            Op::Slice { input, start, shape } => {
                let v = self.val(*input);
                let len: usize = shape.iter().product();
                if start + len > v.numel() {
                    return Err(self.mismatch(idx, &[*input]));
                }
                Tensor::new(shape, v.data()[*start..start + len].to_vec())
            }
            Op::Reshape { input, shape } => {
                let v = self.val(*input);
                v.reshaped(shape).map_err(|_| self.mismatch(idx, &[*input]))
            }
            Op::ReduceSum { input, axis } | Op::ReduceMean { input, axis } => {
                let v = self.val(*input);
                let mean = matches!(op, Op::ReduceMean { .. });
                match axis {
                    None => {
                        let s: f64 = v.data().iter().sum();
                        let out = if mean { s / v.numel() as f64 } else { s };
                        Ok(Tensor::scalar(out))
                    }
                    Some(ax) => {
                        if *ax >= v.rank() {
                            return Err(self.mismatch(idx, &[*input]));
                        }
                        let (pre, len, post) = split_axis(v.shape(), *ax);
                        let mut out = vec![0.0; pre * post];
                        let d = v.data();
                        for p in 0..pre {
                            for a in 0..len {
                                let base = (p * len + a) * post;
                                for q in 0..post {
                                    out[p * post + q] += d[base + q];
                                }
                            }
                        }
                        if mean {
                            let inv = len as f64;
                            out.iter_mut().for_each(|o| *o /= inv);
                        }
                        let mut shape = v.shape().to_vec();
                        shape.remove(*ax);
                        Tensor::new(&shape, out)
                    }
                }
            }
        }
    }

    /// Reverse-mode pass from a single-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, DiffError> {
        if loss.0 >= self.evaluated {
            return Err(DiffError::NotEvaluated(loss.0));
        }
        let loss_value = self.val(loss);
        if !loss_value.is_scalar() {
            return Err(DiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }

        let n = loss.0 + 1;
        let mut needs = vec![false; n];
        for i in 0..n {
            needs[i] = match &self.ops[i] {
                Op::Leaf { requires_grad } => *requires_grad,
                op => op.inputs().iter().any(|j| needs[j.0]),
            };
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut result = Gradients::default();

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !needs[idx] {
                continue;
            }
            let op = &self.ops[idx];
            match op {
                Op::Leaf { .. } => {
                    let shape = self.val(NodeId(idx)).shape().to_vec();
                    result.map.insert(NodeId(idx), Tensor::new(&shape, g)?);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    let (m, k, nn) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if needs[a.0] {
                        let buf = grad_buf(&mut grads, *a, m * k);
                        gemm(m, nn, k, &g, false, bv.data(), true, buf);
                    }
                    if needs[b.0] {
                        let buf = grad_buf(&mut grads, *b, k * nn);
                        gemm(k, m, nn, av.data(), true, &g, false, buf);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, &needs, *a, g.iter().copied());
                    accumulate(&mut grads, &needs, *b, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, &needs, *a, g.iter().copied());
                    accumulate(&mut grads, &needs, *b, g.iter().map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                    accumulate(&mut grads, &needs, *a, g.iter().zip(bv).map(|(g, y)| g * y));
                    accumulate(&mut grads, &needs, *b, g.iter().zip(av).map(|(g, x)| g * x));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                    accumulate(&mut grads, &needs, *a, g.iter().zip(bv).map(|(g, y)| g / y));
                    accumulate(
                        &mut grads,
                        &needs,
                        *b,
                        g.iter().zip(av).zip(bv).map(|((g, x), y)| -g * x / (y * y)),
                    );
                }
                Op::BroadcastAdd(x, row) => {
                    accumulate(&mut grads, &needs, *x, g.iter().copied());
                    if needs[row.0] {
                        let width = self.val(*row).numel();
                        let buf = grad_buf(&mut grads, *row, width);
                        for chunk in g.chunks_exact(width) {
                            for (o, v) in buf.iter_mut().zip(chunk) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::Relu(a) => {
                    let x = self.val(*a).data();
                    accumulate(
                        &mut grads,
                        &needs,
                        *a,
                        g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }),
                    );
                }
                Op::Sin(a) => {
                    let x = self.val(*a).data();
                    accumulate(&mut grads, &needs, *a, g.iter().zip(x).map(|(g, x)| g * x.cos()));
                }
                Op::Cos(a) => {
                    let x = self.val(*a).data();
                    accumulate(&mut grads, &needs, *a, g.iter().zip(x).map(|(g, x)| -g * x.sin()));
                }
                Op::Square(a) => {
                    let x = self.val(*a).data();
                    accumulate(&mut grads, &needs, *a, g.iter().zip(x).map(|(g, x)| 2.0 * x * g));
                }
                Op::Sqrt(a) => {
                    let y = self.val(NodeId(idx)).data();
                    accumulate(&mut grads, &needs, *a, g.iter().zip(y).map(|(g, y)| g / (2.0 * y)));
                }
                Op::Log(a) => {
                    let x = self.val(*a).data();
                    accumulate(&mut grads, &needs, *a, g.iter().zip(x).map(|(g, x)| g / x));
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, &needs, *a, g.iter().map(|g| g * c));
                }
                Op::ClampMin(a, floor) => {
                    let x = self.val(*a).data();
                    accumulate(
                        &mut grads,
                        &needs,
                        *a,
                        g.iter().zip(x).map(|(g, &x)| if x > *floor { *g } else { 0.0 }),
                    );
                }
                Op::Concat { inputs, axis } => {
                    let outer: usize = self.val(inputs[0]).shape()[..*axis].iter().product();
                    let inners: Vec<usize> =
                        inputs.iter().map(|&i| self.val(i).numel() / outer).collect();
                    let row: usize = inners.iter().sum();
                    let mut offset = 0;
                    for (&input, &inner) in inputs.iter().zip(&inners) {
                        if needs[input.0] {
                            let numel = self.val(input).numel();
                            let buf = grad_buf(&mut grads, input, numel);
                            for o in 0..outer {
                                let src = &g[o * row + offset..o * row + offset + inner];
                                for (d, s) in buf[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        offset += inner;
                    }
                }
                Op::Slice { input, start, .. } => {
                    if needs[input.0] {
                        let numel = self.val(*input).numel();
                        let buf = grad_buf(&mut grads, *input, numel);
                        for (d, s) in buf[*start..start + g.len()].iter_mut().zip(&g) {
                            *d += s;
                        }
                    }
                }
                Op::Reshape { input, .. } => {
                    accumulate(&mut grads, &needs, *input, g.iter().copied());
                }
                Op::ReduceSum { input, axis } | Op::ReduceMean { input, axis } => {
                    let v = self.val(*input);
                    let mean = matches!(op, Op::ReduceMean { .. });
                    match axis {
                        None => {
                            let s = if mean { g[0] / v.numel() as f64 } else { g[0] };
                            accumulate(&mut grads, &needs, *input, std::iter::repeat_n(s, v.numel()));
                        }
                        Some(ax) => {
                            let (pre, len, post) = split_axis(v.shape(), *ax);
                            let div = if mean { len as f64 } else { 1.0 };
                            let expanded = (0..pre * len * post).map(|flat| {
                                let p = flat / (len * post);
                                let q = flat % post;
                                g[p * post + q] / div
                            });
                            accumulate(&mut grads, &needs, *input, expanded);
                        }
                    }
                }
            }
        }
        Ok(result)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let pre = shape[..axis].iter().product();
    let post = shape[axis + 1..].iter().product();
    (pre, shape[axis], post)
}

fn grad_buf(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(
    grads: &mut [Option<Vec<f64>>],
    needs: &[bool],
    id: NodeId,
    contribution: impl ExactSizeIterator<Item = f64>,
) {
    if !needs[id.0] {
        return;
    }
    match &mut grads[id.0] {
        Some(buf) => {
            for (d, s) in buf.iter_mut().zip(contribution) {
                *d += s;
            }
        }
        slot @ None => *slot = Some(contribution.collect()),
    }
}

/// `c += op(a) · op(b)` for row-major operands, where `op` optionally
/// transposes. `a` is `m × k` after `op`, `b` is `k × n` after `op`.
#[allow(clippy::too_many_arguments)]
const SKINNY_MIN_RHS: usize = 1 << 18;
const SKINNY_MAX_INNER: usize = 16;

#[allow(clippy::too_many_arguments)]
fn skinny_gemm(m: usize, k: usize, n: usize, a: &[f64], a_trans: bool, b: &[f64], b_trans: bool, c: &mut [f64]) {
    let a_at = |i: usize, p: usize| if a_trans { a[p * m + i] } else { a[i * k + p] };
    if b_trans {
        // b is stored as [n, k]: every output is a contiguous dot product.
        let mut row = vec![0.0; k];
        for i in 0..m {
            for (p, r) in row.iter_mut().enumerate() {
                *r = a_at(i, p);
            }
            let out = &mut c[i * n..(i + 1) * n];
            for (j, o) in out.iter_mut().enumerate() {
                let col = &b[j * k..(j + 1) * k];
                *o += row.iter().zip(col).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    } else {
        for i in 0..m {
            let out = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let x = a_at(i, p);
                if x == 0.0 {
                    continue;
                }
                for (o, y) in out.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
    }
}

pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // Products against a very wide right-hand side (hypernetwork heads) or
    // over a tiny inner dimension (their weight gradients) waste most of
    // their time packing panels. The choice depends only on (k, n), never
    // on m, so each output row is computed the same way however many rows
    // are in the batch.
    if k * n > SKINNY_MIN_RHS || k <= SKINNY_MAX_INNER {
        skinny_gemm(m, k, n, a, a_trans, b, b_trans, c);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m·k, k·n and m·n
    // elements of the checked slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
