use super::{Real, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    Softmax(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
        end: usize,
    },
    Transpose(Var),
    Mean {
        x: Var,
        axis: Option<usize>,
    },
    Max {
        x: Var,
        argmax: Vec<usize>,
    },
    Gather {
        x: Var,
        ids: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of primitive operations. Nodes are stored in creation
/// order, which is a topological order of the graph.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the loss does not depend on `var`.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Right-aligned broadcast of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize], i: usize| {
        let off = rank - s.len();
        if i < off {
            1
        } else {
            s[i - off]
        }
    };
    (0..rank)
        .map(|i| match (pad(a, i), pad(b, i)) {
            (x, y) if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// For every flat index of `out`, the flat index of the broadcast input.
fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let n: usize = out.iter().product();
    let m: usize = inp.iter().product();
    if out == inp {
        return (0..n).collect();
    }
    // input is a trailing suffix of the output: tile it
    if inp.len() <= out.len() && out[out.len() - inp.len()..] == *inp {
        return (0..n).map(|i| i % m).collect();
    }
    let rank = out.len();
    let off = rank - inp.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..rank).rev() {
        if i >= off {
            let d = inp[i - off];
            strides[i] = if d == 1 { 0 } else { s };
            s *= d;
        }
    }
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(n);
    let mut flat = 0usize;
    for _ in 0..n {
        map.push(flat);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            flat += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            flat -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

fn reduce_to<T: Real>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let map = broadcast_map(grad.shape(), shape);
    let mut out = Tensor::zeros(shape);
    let data = out.data_mut();
    for (&g, &j) in grad.data().iter().zip(&map) {
        data[j] = data[j] + g;
    }
    out
}

/// Splits a shape around `axis` into (outer, dim, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    /// Tape that rejects any operation producing NaN or infinity.
    pub fn checked() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node recorded after the first `len`, so a tape holding
    /// frozen parameters can be reused across forward passes.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable input (parameter or point of evaluation).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var, TensorError> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Softmax(x)
            | Op::Transpose(x)
            | Op::Clamp { x, .. }
            | Op::Slice { x, .. }
            | Op::Mean { x, .. }
            | Op::Max { x, .. }
            | Op::Gather { x, .. } => vec![*x],
            Op::Concat(xs) => xs.clone(),
        }
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], data), Op::MatMul(a, b))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| mismatch(name, ta.shape(), tb.shape()))?;
        let data: Vec<T> = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_map(&shape, ta.shape());
            let mb = broadcast_map(&shape, tb.shape());
            ma.iter()
                .zip(&mb)
                .map(|(&i, &j)| f(ta.data()[i], tb.data()[j]))
                .collect()
        };
        self.push(name, Tensor::from_parts(shape, data), op)
    }

    /// Elementwise sum with broadcasting (dimensions align from the right;
    /// each pair must be equal or 1).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        let v = self.value(x).map(|v| v * c);
        self.push("scale", v, Op::Scale(x, c))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).map(T::tanh);
        self.push("tanh", v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push("sigmoid", v, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", v, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).map(T::exp);
        self.push("exp", v, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).map(T::ln);
        self.push("log", v, Op::Log(x))
    }

    /// Elementwise clamp into `[lo, hi]`; gradient passes only inside.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var, TensorError> {
        let v = self.value(x).map(|v| v.max(lo).min(hi));
        self.push("clamp", v, Op::Clamp { x, lo, hi })
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let (rows, cols) = t.rows_cols();
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let shape = t.shape().to_vec();
        self.push("softmax", Tensor::from_parts(shape, out), Op::Softmax(x))
    }

    /// Concatenates along the last axis; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let first = *xs
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of zero tensors".into()))?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != *lead {
                return Err(mismatch("concat", self.shape(first), s));
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                let (_, c) = self.value(x).rows_cols();
                data.extend_from_slice(&self.value(x).data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        self.push("concat", Tensor::from_parts(shape, data), Op::Concat(xs.to_vec()))
    }

    /// Keeps indices `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(TensorError::InvalidArgument(format!(
                "slice {start}..{end} on axis {axis} of shape {s:?}"
            )));
        }
        let (outer, dim, inner) = axis_extents(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        self.push(
            "slice",
            Tensor::from_parts(shape, data),
            Op::Slice { x, axis, start, end },
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(mismatch("transpose", &s, &[]));
        }
        let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = self.value(x).len() / (m * n);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); src.len()];
        for b in 0..batch {
            let off = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    data[off + j * m + i] = src[off + i * n + j];
                }
            }
        }
        let mut shape = s;
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        self.push("transpose", Tensor::from_parts(shape, data), Op::Transpose(x))
    }

    /// Mean over `axis` (kept with size 1), or over all elements into a
    /// one-element tensor when `axis` is `None`.
    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var, TensorError> {
        let t = self.value(x);
        let value = match axis {
            None => {
                let sum = t.data().iter().fold(T::zero(), |a, &b| a + b);
                Tensor::scalar(sum / T::from_usize(t.len()).unwrap())
            }
            Some(axis) => {
                if axis >= t.rank() {
                    return Err(TensorError::InvalidArgument(format!(
                        "mean over axis {axis} of shape {:?}",
                        t.shape()
                    )));
                }
                let (outer, dim, inner) = axis_extents(t.shape(), axis);
                let scale = T::one() / T::from_usize(dim).unwrap();
                let src = t.data();
                let mut data = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for a in 0..dim {
                        let base = (o * dim + a) * inner;
                        for i in 0..inner {
                            data[o * inner + i] = data[o * inner + i] + src[base + i];
                        }
                    }
                }
                for v in &mut data {
                    *v = *v * scale;
                }
                let mut shape = t.shape().to_vec();
                shape[axis] = 1;
                Tensor::from_parts(shape, data)
            }
        };
        self.push("mean", value, Op::Mean { x, axis })
    }

    /// Maximum over `axis` (kept with size 1). The gradient flows to the
    /// first position attaining the maximum.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(TensorError::InvalidArgument(format!(
                "max over axis {axis} of shape {:?}",
                t.shape()
            )));
        }
        let (outer, dim, inner) = axis_extents(t.shape(), axis);
        let src = t.data();
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * dim * inner + i;
                for a in 1..dim {
                    let j = (o * dim + a) * inner + i;
                    if src[j] > src[best] {
                        best = j;
                    }
                }
                data.push(src[best]);
                argmax.push(best);
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        self.push("max", Tensor::from_parts(shape, data), Op::Max { x, argmax })
    }

    /// Selects rows of a rank-2 tensor: `[V, D]` with `n` ids gives `[n, D]`.
    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(mismatch("gather_rows", t.shape(), &[ids.len()]));
        }
        if ids.is_empty() {
            return Err(TensorError::InvalidArgument("gather_rows with no ids".into()));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange { index: id, len: rows });
            }
            data.extend_from_slice(&t.data()[id * cols..(id + 1) * cols]);
        }
        self.push(
            "gather_rows",
            Tensor::from_parts(vec![ids.len(), cols], data),
            Op::Gather { x, ids: ids.to_vec() },
        )
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            self.propagate(node, g, lower);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        let zip_map = |x: &Tensor<T>, f: &dyn Fn(T, T) -> T| -> Tensor<T> {
            Tensor::from_parts(
                x.shape().to_vec(),
                x.data().iter().zip(g.data()).map(|(&a, &b)| f(a, b)).collect(),
            )
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.wants(*a) {
                    // dA = G B^T
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).fold(T::zero(), |s, (&x, &y)| s + x * y);
                        }
                    }
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], da));
                }
                if self.wants(*b) {
                    // dB = A^T G
                    let mut db = vec![T::zero(); k * n];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            if av == T::zero() {
                                continue;
                            }
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d = *d + av * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, reduce_to(g, self.shape(*a)));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, reduce_to(g, self.shape(*b)));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, reduce_to(g, self.shape(*a)));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, reduce_to(&g.map(|v| -v), self.shape(*b)));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let out = y.shape();
                let ma = broadcast_map(out, ta.shape());
                let mb = broadcast_map(out, tb.shape());
                if self.wants(*a) {
                    let full = Tensor::from_parts(
                        out.to_vec(),
                        g.data().iter().zip(&mb).map(|(&gv, &j)| gv * tb.data()[j]).collect(),
                    );
                    self.accumulate(grads, *a, reduce_to(&full, ta.shape()));
                }
                if self.wants(*b) {
                    let full = Tensor::from_parts(
                        out.to_vec(),
                        g.data().iter().zip(&ma).map(|(&gv, &i)| gv * ta.data()[i]).collect(),
                    );
                    self.accumulate(grads, *b, reduce_to(&full, tb.shape()));
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, g.map(|v| v * c));
            }
            Op::Tanh(x) => {
                let d = zip_map(y, &|yv, gv| gv * (T::one() - yv * yv));
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = zip_map(y, &|yv, gv| gv * yv * (T::one() - yv));
                self.accumulate(grads, *x, d);
            }
            Op::Relu(x) => {
                let d = zip_map(self.value(*x), &|xv, gv| if xv > T::zero() { gv } else { T::zero() });
                self.accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = zip_map(y, &|yv, gv| gv * yv);
                self.accumulate(grads, *x, d);
            }
            Op::Log(x) => {
                let d = zip_map(self.value(*x), &|xv, gv| gv / xv);
                self.accumulate(grads, *x, d);
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let d = zip_map(self.value(*x), &|xv, gv| {
                    if xv >= lo && xv <= hi {
                        gv
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *x, d);
            }
            Op::Softmax(x) => {
                let (rows, cols) = y.rows_cols();
                let mut d = vec![T::zero(); y.len()];
                for r in 0..rows {
                    let ys = &y.data()[r * cols..(r + 1) * cols];
                    let gs = &g.data()[r * cols..(r + 1) * cols];
                    let dot = ys.iter().zip(gs).fold(T::zero(), |s, (&a, &b)| s + a * b);
                    for c in 0..cols {
                        d[r * cols + c] = ys[c] * (gs[c] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Concat(xs) => {
                let (rows, total) = y.rows_cols();
                let mut off = 0;
                for &x in xs {
                    let t = self.value(x);
                    let (_, c) = t.rows_cols();
                    if self.wants(x) {
                        let mut d = Vec::with_capacity(t.len());
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + off..r * total + off + c]);
                        }
                        self.accumulate(grads, x, Tensor::from_parts(t.shape().to_vec(), d));
                    }
                    off += c;
                }
            }
            Op::Slice { x, axis, start, end } => {
                let s = self.shape(*x);
                let (outer, dim, inner) = axis_extents(s, *axis);
                let width = (end - start) * inner;
                let mut d = vec![T::zero(); outer * dim * inner];
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    d[base..base + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
                }
                self.accumulate(grads, *x, Tensor::from_parts(s.to_vec(), d));
            }
            Op::Transpose(x) => {
                let s = y.shape();
                let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
                let batch = y.len() / (m * n);
                let mut d = vec![T::zero(); y.len()];
                for b in 0..batch {
                    let off = b * m * n;
                    for i in 0..m {
                        for j in 0..n {
                            d[off + j * m + i] = g.data()[off + i * n + j];
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(self.shape(*x).to_vec(), d));
            }
            Op::Mean { x, axis } => {
                let s = self.shape(*x).to_vec();
                let d = match axis {
                    None => {
                        let n = T::from_usize(s.iter().product()).unwrap();
                        Tensor::full(&s, g.data()[0] / n)
                    }
                    Some(axis) => {
                        let (outer, dim, inner) = axis_extents(&s, *axis);
                        let scale = T::one() / T::from_usize(dim).unwrap();
                        let mut d = vec![T::zero(); outer * dim * inner];
                        for o in 0..outer {
                            for a in 0..dim {
                                for i in 0..inner {
                                    d[(o * dim + a) * inner + i] = g.data()[o * inner + i] * scale;
                                }
                            }
                        }
                        Tensor::from_parts(s, d)
                    }
                };
                self.accumulate(grads, *x, d);
            }
            Op::Max { x, argmax } => {
                let s = self.shape(*x);
                let mut d = Tensor::zeros(s);
                let dd = d.data_mut();
                for (&j, &gv) in argmax.iter().zip(g.data()) {
                    dd[j] = dd[j] + gv;
                }
                self.accumulate(grads, *x, d);
            }
            Op::Gather { x, ids } => {
                let s = self.shape(*x);
                let cols = s[1];
                let mut d = Tensor::zeros(s);
                let dd = d.data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..cols {
                        dd[id * cols + c] = dd[id * cols + c] + g.data()[r * cols + c];
                    }
                }
                self.accumulate(grads, *x, d);
            }
        }
    }
}
