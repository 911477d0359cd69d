use std::cell::{Cell, Ref, RefCell};

use super::tensor::{axis_split, numel, Tensor};
use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Broadcast(usize),
    Concat(Vec<usize>, usize),
    Slice { src: usize, axis: usize, start: usize },
    Sum(usize),
    SumAxis(usize, usize),
    Mean(usize),
    MeanAxis(usize, usize),
    Relu(usize),
    Silu(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sqrt(usize),
    Abs(usize),
    Softmax(usize),
    LogSoftmax(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations for one reverse pass.
///
/// A tape is single-use: after [`Tape::backward`] succeeds, a second call
/// reports [`AutodiffError::TapeConsumed`].
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// Gradients of a scalar loss with respect to every node that required them.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when the loss does not reach it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// C (m×n) += A (m×k) · B (k×n), with optional transposes expressed as strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: slices cover m*k, k*n and m*n elements with the strides above.
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

/// Strides of `src` (rank-aligned to `dst`) with zeros on broadcast axes.
fn broadcast_strides(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let pad = dst.len() - src.len();
    let mut strides = vec![0; dst.len()];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[pad + i] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    strides
}

/// Calls `f(dst_flat, src_flat)` for every element of the broadcast result.
fn for_each_broadcast(src: &[usize], dst: &[usize], mut f: impl FnMut(usize, usize)) {
    let strides = broadcast_strides(src, dst);
    let total = numel(dst);
    let mut idx = vec![0usize; dst.len()];
    let mut src_flat = 0usize;
    for flat in 0..total {
        f(flat, src_flat);
        for ax in (0..dst.len()).rev() {
            idx[ax] += 1;
            src_flat += strides[ax];
            if idx[ax] < dst[ax] {
                break;
            }
            src_flat -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// A trainable input: gradients are reported for it.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A fixed input: no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var<'_>], axis: usize) -> Result<Var<'_>> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let first = nodes[ids[0]].value.shape().to_vec();
            if axis >= first.len() {
                return Err(shape_err("concat", format!("axis {axis} out of range for {first:?}")));
            }
            let mut total = 0;
            for &i in &ids {
                let s = nodes[i].value.shape();
                if s.len() != first.len()
                    || s.iter().zip(&first).enumerate().any(|(ax, (a, b))| ax != axis && a != b)
                {
                    return Err(shape_err("concat", format!("{first:?} vs {s:?} along axis {axis}")));
                }
                total += s[axis];
            }
            let mut shape = first.clone();
            shape[axis] = total;
            let (outer, _, inner) = axis_split(&shape, axis);
            let mut data = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for &i in &ids {
                    let t = &nodes[i].value;
                    let w = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
                }
            }
            Tensor::from_parts(shape, data)
        };
        let rg = self.rg(&ids);
        Ok(self.push(value, Op::Concat(ids, axis), rg))
    }

    /// Reverse pass from a scalar loss. Consumes the tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.consumed.get() {
            return Err(AutodiffError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape();
        if numel(loss_shape) != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_shape.to_vec()));
        }
        self.consumed.set(true);
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[loss.id].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.id] = Some(Tensor::full(loss_shape, 1.0));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed.get()
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf | Op::Constant => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            accumulate(nodes, grads, *a, zip_map(g, val(*b), |x, y| x * y));
            accumulate(nodes, grads, *b, zip_map(g, val(*a), |x, y| x * y));
        }
        Op::Div(a, b) => {
            accumulate(nodes, grads, *a, zip_map(g, val(*b), |x, y| x / y));
            let gb = zip_map(&zip_map(g, out, |x, o| x * o), val(*b), |x, y| -x / y);
            accumulate(nodes, grads, *b, gb);
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.map(|v| v * c)),
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, tb.data(), true, &mut ga);
                accumulate(nodes, grads, *a, Tensor::from_parts(vec![m, k], ga));
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, ta.data(), true, g.data(), false, &mut gb);
                accumulate(nodes, grads, *b, Tensor::from_parts(vec![k, n], gb));
            }
        }
        Op::Transpose(a) => accumulate(nodes, grads, *a, g.transposed()),
        Op::Reshape(a) => {
            let shape = val(*a).shape().to_vec();
            accumulate(nodes, grads, *a, Tensor::from_parts(shape, g.data().to_vec()));
        }
        Op::Broadcast(a) => {
            let src = val(*a).shape().to_vec();
            let mut acc = vec![0.0; numel(&src)];
            let gd = g.data();
            for_each_broadcast(&src, out.shape(), |d, s| acc[s] += gd[d]);
            accumulate(nodes, grads, *a, Tensor::from_parts(src, acc));
        }
        Op::Concat(ids, axis) => {
            let (outer, _, inner) = axis_split(out.shape(), *axis);
            let total = out.shape()[*axis] * inner;
            let mut offset = 0;
            for &i in ids {
                let shape = val(i).shape().to_vec();
                let w = shape[*axis] * inner;
                let mut part = Vec::with_capacity(numel(&shape));
                for o in 0..outer {
                    let base = o * total + offset;
                    part.extend_from_slice(&g.data()[base..base + w]);
                }
                offset += w;
                accumulate(nodes, grads, i, Tensor::from_parts(shape, part));
            }
        }
        Op::Slice { src, axis, start } => {
            let shape = val(*src).shape().to_vec();
            let (outer, dim, inner) = axis_split(&shape, *axis);
            let len = out.shape()[*axis];
            let mut acc = vec![0.0; numel(&shape)];
            for o in 0..outer {
                let dst = o * dim * inner + start * inner;
                let srcoff = o * len * inner;
                acc[dst..dst + len * inner].copy_from_slice(&g.data()[srcoff..srcoff + len * inner]);
            }
            accumulate(nodes, grads, *src, Tensor::from_parts(shape, acc));
        }
        Op::Sum(a) => {
            let s = g.item();
            accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), s));
        }
        Op::Mean(a) => {
            let n = val(*a).numel().max(1) as f64;
            accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), g.item() / n));
        }
        Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
            let shape = val(*a).shape().to_vec();
            let (outer, dim, inner) = axis_split(&shape, *axis);
            let scale = if matches!(nodes[id].op, Op::MeanAxis(..)) { 1.0 / dim as f64 } else { 1.0 };
            let mut acc = vec![0.0; numel(&shape)];
            for o in 0..outer {
                for d in 0..dim {
                    for i in 0..inner {
                        acc[(o * dim + d) * inner + i] = g.data()[o * inner + i] * scale;
                    }
                }
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(shape, acc));
        }
        Op::Relu(a) => {
            accumulate(nodes, grads, *a, zip_map(g, val(*a), |x, v| if v > 0.0 { x } else { 0.0 }))
        }
        Op::Silu(a) => {
            let ga = zip_map(g, val(*a), |x, v| {
                let s = sigmoid(v);
                x * (s + v * s * (1.0 - s))
            });
            accumulate(nodes, grads, *a, ga);
        }
        Op::Tanh(a) => accumulate(nodes, grads, *a, zip_map(g, out, |x, o| x * (1.0 - o * o))),
        Op::Exp(a) => accumulate(nodes, grads, *a, zip_map(g, out, |x, o| x * o)),
        Op::Log(a) => accumulate(nodes, grads, *a, zip_map(g, val(*a), |x, v| x / v)),
        Op::Square(a) => accumulate(nodes, grads, *a, zip_map(g, val(*a), |x, v| 2.0 * x * v)),
        Op::Sqrt(a) => accumulate(nodes, grads, *a, zip_map(g, out, |x, o| 0.5 * x / o)),
        Op::Abs(a) => accumulate(nodes, grads, *a, zip_map(g, val(*a), |x, v| x * v.signum() * (v != 0.0) as u8 as f64)),
        Op::Softmax(a) => {
            let last = *out.shape().last().unwrap_or(&1);
            let mut ga = vec![0.0; out.numel()];
            for (r, row) in out.data().chunks(last).enumerate() {
                let gr = &g.data()[r * last..(r + 1) * last];
                let dot: f64 = row.iter().zip(gr).map(|(y, gy)| y * gy).sum();
                for j in 0..last {
                    ga[r * last + j] = row[j] * (gr[j] - dot);
                }
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(out.shape().to_vec(), ga));
        }
        Op::LogSoftmax(a) => {
            let last = *out.shape().last().unwrap_or(&1);
            let mut ga = vec![0.0; out.numel()];
            for (r, row) in out.data().chunks(last).enumerate() {
                let gr = &g.data()[r * last..(r + 1) * last];
                let gsum: f64 = gr.iter().sum();
                for j in 0..last {
                    ga[r * last + j] = gr[j] - row[j].exp() * gsum;
                }
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(out.shape().to_vec(), ga));
        }
    }
}

macro_rules! unary {
    ($(#[$m:meta])* $name:ident, $op:ident, $f:expr) => {
        $(#[$m])*
        pub fn $name(self) -> Var<'t> {
            let value = self.value_ref().map($f);
            let rg = self.requires_grad();
            self.tape.push(value, Op::$op(self.id), rg)
        }
    };
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrowed view of the forward value.
    pub fn value_ref(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn value(&self) -> Tensor {
        self.value_ref().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value_ref().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        make: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.value_ref(), other.value_ref());
            same_shape(name, &a, &b)?;
            zip_map(&a, &b, f)
        };
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(value, make(self.id, other.id), rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let value = self.value_ref().map(|v| v * c);
        let rg = self.requires_grad();
        self.tape.push(value, Op::Scale(self.id, c), rg)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.value_ref(), other.value_ref());
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut c);
            Tensor::from_parts(vec![m, n], c)
        };
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let value = {
            let a = self.value_ref();
            if a.rank() != 2 {
                return Err(shape_err("transpose", format!("{:?} is not a matrix", a.shape())));
            }
            a.transposed()
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Transpose(self.id), rg))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.value().reshaped(shape.to_vec())?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Reshape(self.id), rg))
    }

    /// Expands size-1 axes (and missing leading axes) to `shape`.
    pub fn broadcast(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = {
            let a = self.value_ref();
            let src = a.shape();
            let ok = src.len() <= shape.len()
                && src
                    .iter()
                    .zip(&shape[shape.len() - src.len()..])
                    .all(|(&s, &d)| s == d || s == 1);
            if !ok {
                return Err(shape_err("broadcast", format!("{src:?} to {shape:?}")));
            }
            let mut data = vec![0.0; numel(shape)];
            let ad = a.data();
            for_each_broadcast(src, shape, |d, s| data[d] = ad[s]);
            Tensor::from_parts(shape.to_vec(), data)
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Broadcast(self.id), rg))
    }

    /// Broadcasts `other` to this shape, then adds.
    pub fn add_broadcast(self, other: Var<'t>) -> Result<Var<'t>> {
        let b = other.broadcast(&self.shape())?;
        self.add(b)
    }

    /// Broadcasts `other` to this shape, then multiplies elementwise.
    pub fn mul_broadcast(self, other: Var<'t>) -> Result<Var<'t>> {
        let b = other.broadcast(&self.shape())?;
        self.mul(b)
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value_ref();
            let shape = a.shape();
            if axis >= shape.len() || start > end || end > shape[axis] {
                return Err(shape_err("slice", format!("{start}..{end} on axis {axis} of {shape:?}")));
            }
            let (outer, dim, inner) = axis_split(shape, axis);
            let len = end - start;
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * dim + start) * inner;
                data.extend_from_slice(&a.data()[base..base + len * inner]);
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = len;
            Tensor::from_parts(out_shape, data)
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Slice { src: self.id, axis, start }, rg))
    }

    pub fn sum(self) -> Var<'t> {
        let value = Tensor::scalar(self.value_ref().sum());
        let rg = self.requires_grad();
        self.tape.push(value, Op::Sum(self.id), rg)
    }

    pub fn mean(self) -> Var<'t> {
        let value = {
            let a = self.value_ref();
            Tensor::scalar(a.sum() / a.numel().max(1) as f64)
        };
        let rg = self.requires_grad();
        self.tape.push(value, Op::Mean(self.id), rg)
    }

    fn reduce_axis(self, axis: usize, mean: bool) -> Result<Var<'t>> {
        let value = {
            let a = self.value_ref();
            let shape = a.shape();
            if axis >= shape.len() {
                let name = if mean { "mean_axis" } else { "sum_axis" };
                return Err(shape_err(name, format!("axis {axis} of {shape:?}")));
            }
            let (outer, dim, inner) = axis_split(shape, axis);
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for d in 0..dim {
                    let row = &a.data()[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                    for (acc, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                        *acc += v;
                    }
                }
            }
            if mean {
                data.iter_mut().for_each(|v| *v /= dim as f64);
            }
            let mut out_shape = shape.to_vec();
            out_shape.remove(axis);
            Tensor::from_parts(out_shape, data)
        };
        let rg = self.requires_grad();
        let op = if mean { Op::MeanAxis(self.id, axis) } else { Op::SumAxis(self.id, axis) };
        Ok(self.tape.push(value, op, rg))
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        self.reduce_axis(axis, true)
    }

    unary!(relu, Relu, |v| v.max(0.0));
    unary!(
        /// `x * sigmoid(x)`.
        silu, Silu, |v| v * sigmoid(v)
    );
    unary!(tanh, Tanh, f64::tanh);
    unary!(exp, Exp, f64::exp);
    unary!(log, Log, f64::ln);
    unary!(square, Square, |v| v * v);
    unary!(sqrt, Sqrt, f64::sqrt);
    unary!(abs, Abs, f64::abs);

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'t> {
        let value = {
            let a = self.value_ref();
            let last = *a.shape().last().unwrap_or(&1);
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(last) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v /= z);
            }
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        let rg = self.requires_grad();
        self.tape.push(value, Op::Softmax(self.id), rg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Var<'t> {
        let value = {
            let a = self.value_ref();
            let last = *a.shape().last().unwrap_or(&1);
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(last) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        let rg = self.requires_grad();
        self.tape.push(value, Op::LogSoftmax(self.id), rg)
    }
}
