use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows = 0,
    Cols = 1,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softmax(Var, Axis),
    Concat(Vec<Var>, Axis),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Transpose(Var),
    ScaleRows(Var, Var),
    Column(Var, usize),
    Rows(Var, usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Tape of tensor operations supporting reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is topologically
/// sorted by construction. Operations whose inputs need no gradient are
/// stored as plain values and never revisited by [`Graph::backward`].
///
/// Gradients accumulate across `backward` calls until [`Graph::zero_grad`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created after `len`. Handles to dropped nodes become
    /// dangling; used to recycle a graph between inference steps.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a node, if `backward` has reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("[{m}, {k}] x [{k2}, {n}]: inner dimensions differ"),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            T::zero(),
            &mut out,
        );
        let value = Tensor::matrix(m, n, out)?;
        self.push(value, Op::MatMul(a, b), &[a, b], "matmul")
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(value, op, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a `1 x n` bias to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let bshape = self.value(bias).shape();
        if bshape != [1, n] {
            return Err(Error::shape("add_row", format!("[{m}, {n}] + {bshape:?}")));
        }
        let b = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let value = Tensor::matrix(m, n, data)?;
        self.push(value, Op::AddRow(a, bias), &[a, bias], "add_row")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c), &[a], "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(T::zero()));
        self.push(value, Op::Relu(a), &[a], "relu")
    }

    /// Softmax along `axis` of a rank-2 tensor (rank 1 is one row).
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let input = self.value(a);
        let (groups, len, outer, inner) = softmax_layout(input, axis)?;
        let mut out = vec![T::zero(); input.numel()];
        for g in 0..groups {
            let (base, stride) = if axis == Axis::Cols || input.shape().len() == 1 {
                (g * outer, inner)
            } else {
                (g, outer)
            };
            let x = input.data();
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(x[base + j * stride]);
            }
            let mut total = T::zero();
            for j in 0..len {
                let e = (x[base + j * stride] - max).exp();
                out[base + j * stride] = e;
                total = total + e;
            }
            for j in 0..len {
                out[base + j * stride] = out[base + j * stride] / total;
            }
        }
        let value = Tensor::new(input.shape().to_vec(), out)?;
        self.push(value, Op::Softmax(a, axis), &[a], "softmax")
    }

    /// Concatenates along `axis`; shapes must agree on the other axis.
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.value(p).dims2())
            .collect::<Result<_>>()?;
        let value = match axis {
            Axis::Rows => {
                let cols = dims[0].1;
                if let Some(bad) = dims.iter().find(|d| d.1 != cols) {
                    return Err(Error::shape(
                        "concat",
                        format!("column counts differ: {cols} vs {}", bad.1),
                    ));
                }
                let rows = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::matrix(rows, cols, data)?
            }
            Axis::Cols => {
                let rows = dims[0].0;
                if let Some(bad) = dims.iter().find(|d| d.0 != rows) {
                    return Err(Error::shape(
                        "concat",
                        format!("row counts differ: {rows} vs {}", bad.0),
                    ));
                }
                let cols = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::matrix(rows, cols, data)?
            }
        };
        self.push(value, Op::Concat(parts.to_vec(), axis), parts, "concat")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = t.data().iter().copied().sum::<T>() / T::of(t.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a), &[a], "mean")
    }

    /// Mean of squared differences over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.numel() == 0 {
            return Err(Error::shape("mse", "empty tensor"));
        }
        let s = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            / T::of(va.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mse(a, b), &[a, b], "mse")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = t.dims2()?;
        let value = Tensor::from_fn(n, m, |r, c| t.get(c, r));
        self.push(value, Op::Transpose(a), &[a], "transpose")
    }

    /// Multiplies row `i` of an `m x n` matrix by entry `i` of an `m x 1` column.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let wshape = self.value(w).shape();
        if wshape != [m, 1] {
            return Err(Error::shape("scale_rows", format!("[{m}, {n}] by {wshape:?}")));
        }
        let (va, vw) = (self.value(a), self.value(w));
        let value = Tensor::from_fn(m, n, |r, c| va.get(r, c) * vw.data()[r]);
        self.push(value, Op::ScaleRows(a, w), &[a, w], "scale_rows")
    }

    /// Column `j` as an `m x 1` matrix.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if j >= n {
            return Err(Error::shape("column", format!("column {j} of [{m}, {n}]")));
        }
        let va = self.value(a);
        let value = Tensor::from_fn(m, 1, |r, _| va.get(r, j));
        self.push(value, Op::Column(a, j), &[a], "column")
    }

    /// Rows `start..end` of a matrix.
    pub fn rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start > end || end > m {
            return Err(Error::shape("rows", format!("rows {start}..{end} of [{m}, {n}]")));
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        let value = Tensor::matrix(end - start, n, data)?;
        self.push(value, Op::Rows(a, start), &[a], "rows")
    }

    /// Softmax over each row with entries right of the diagonal masked out:
    /// row `i` distributes weight over columns `0..=i` only.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if n == 0 {
            return Err(Error::shape("causal_softmax", "empty axis"));
        }
        let x = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let visible = (i + 1).min(n);
            let row = &x[i * n..i * n + visible];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut total = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                out[i * n + j] = e;
                total = total + e;
            }
            for o in &mut out[i * n..i * n + visible] {
                *o = *o / total;
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        // Masked entries are exact zeros, so the plain softmax adjoint applies.
        self.push(value, Op::Softmax(a, Axis::Cols), &[a], "causal_softmax")
    }

    /// Reverse sweep from a one-element `loss`, adding into each reachable
    /// gradient. Nodes that require gradients but are not reached get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("backward on an empty graph"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut adj);
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &d)| *a = *a + d),
                    None => node.grad = Some(g),
                }
            }
        }
        for node in &mut self.nodes {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![T::zero(); node.value.numel()]);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("rank 2");
                let n = node.value.cols();
                if wants(*a) {
                    let buf = slot(adj, *a, m * k);
                    // dA = dC * B^T
                    T::gemm(m, n, k, g, (n as isize, 1), self.value(*b).data(), (1, n as isize), T::one(), buf);
                }
                if wants(*b) {
                    let buf = slot(adj, *b, k * n);
                    // dB = A^T * dC
                    T::gemm(k, m, n, self.value(*a).data(), (1, k as isize), g, (n as isize, 1), T::one(), buf);
                }
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, wants(*a), g.iter().copied());
                accumulate(adj, *b, wants(*b), g.iter().copied());
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, wants(*a), g.iter().copied());
                accumulate(adj, *b, wants(*b), g.iter().map(|&d| -d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                accumulate(adj, *a, wants(*a), g.iter().zip(vb).map(|(&d, &y)| d * y));
                accumulate(adj, *b, wants(*b), g.iter().zip(va).map(|(&d, &x)| d * x));
            }
            Op::AddRow(a, bias) => {
                accumulate(adj, *a, wants(*a), g.iter().copied());
                if wants(*bias) {
                    let n = node.value.cols();
                    let buf = slot(adj, *bias, n);
                    for row in g.chunks(n) {
                        buf.iter_mut().zip(row).for_each(|(b, &d)| *b = *b + d);
                    }
                }
            }
            Op::Scale(a, c) => accumulate(adj, *a, wants(*a), g.iter().map(|&d| d * *c)),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                accumulate(
                    adj,
                    *a,
                    wants(*a),
                    g.iter().zip(x).map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }),
                );
            }
            Op::Softmax(a, axis) => {
                if !wants(*a) {
                    return;
                }
                let y = &node.value;
                let (groups, len, outer, inner) = softmax_layout(y, *axis).expect("validated");
                let mut dx = vec![T::zero(); y.numel()];
                for grp in 0..groups {
                    let (base, stride) = if *axis == Axis::Cols || y.shape().len() == 1 {
                        (grp * outer, inner)
                    } else {
                        (grp, outer)
                    };
                    let yd = y.data();
                    let dot: T = (0..len).map(|j| yd[base + j * stride] * g[base + j * stride]).sum();
                    for j in 0..len {
                        let p = base + j * stride;
                        dx[p] = yd[p] * (g[p] - dot);
                    }
                }
                accumulate(adj, *a, true, dx.into_iter());
            }
            Op::Concat(parts, axis) => match axis {
                Axis::Rows => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).numel();
                        accumulate(adj, p, wants(p), g[offset..offset + len].iter().copied());
                        offset += len;
                    }
                }
                Axis::Cols => {
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).dims2().expect("rank 2");
                        if wants(p) {
                            let buf = slot(adj, p, rows * cols);
                            for r in 0..rows {
                                for c in 0..cols {
                                    buf[r * cols + c] = buf[r * cols + c] + g[r * total + offset + c];
                                }
                            }
                        }
                        offset += cols;
                    }
                }
            },
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                accumulate(adj, *a, wants(*a), std::iter::repeat_n(g[0], n));
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let d = g[0] / T::of(n as f64);
                accumulate(adj, *a, wants(*a), std::iter::repeat_n(d, n));
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let c = T::of(2.0) * g[0] / T::of(va.len() as f64);
                accumulate(adj, *a, wants(*a), va.iter().zip(vb).map(|(&x, &y)| c * (x - y)));
                accumulate(adj, *b, wants(*b), va.iter().zip(vb).map(|(&x, &y)| c * (y - x)));
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).dims2().expect("rank 2");
                // g is n x m
                accumulate(adj, *a, wants(*a), (0..m * n).map(|i| g[(i % n) * m + i / n]));
            }
            Op::ScaleRows(a, w) => {
                let (m, n) = self.value(*a).dims2().expect("rank 2");
                let (va, vw) = (self.value(*a).data(), self.value(*w).data());
                accumulate(adj, *a, wants(*a), (0..m * n).map(|i| g[i] * vw[i / n]));
                if wants(*w) {
                    let buf = slot(adj, *w, m);
                    for r in 0..m {
                        let s: T = (0..n).map(|c| g[r * n + c] * va[r * n + c]).sum();
                        buf[r] = buf[r] + s;
                    }
                }
            }
            Op::Column(a, j) => {
                if wants(*a) {
                    let (m, n) = self.value(*a).dims2().expect("rank 2");
                    let buf = slot(adj, *a, m * n);
                    for r in 0..m {
                        buf[r * n + j] = buf[r * n + j] + g[r];
                    }
                }
            }
            Op::Rows(a, start) => {
                if wants(*a) {
                    let (m, n) = self.value(*a).dims2().expect("rank 2");
                    let buf = slot(adj, *a, m * n);
                    let dst = &mut buf[start * n..start * n + g.len()];
                    dst.iter_mut().zip(g).for_each(|(b, &d)| *b = *b + d);
                }
            }
        }
    }
}

fn slot<T: Scalar>(adj: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    adj[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Scalar>(adj: &mut [Option<Vec<T>>], v: Var, wanted: bool, delta: impl Iterator<Item = T>) {
    if !wanted {
        return;
    }
    match &mut adj[v.0] {
        Some(buf) => buf.iter_mut().zip(delta).for_each(|(b, d)| *b = *b + d),
        slot @ None => *slot = Some(delta.collect()),
    }
}

/// `(groups, group_len, row_len, 1)` describing how softmax walks the data.
fn softmax_layout<T: Scalar>(t: &Tensor<T>, axis: Axis) -> Result<(usize, usize, usize, usize)> {
    let (rows, cols) = match t.shape() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        other => return Err(Error::shape("softmax", format!("expected rank 1 or 2, got {other:?}"))),
    };
    let (groups, len) = match (t.shape().len(), axis) {
        (1, _) | (_, Axis::Cols) => (rows, cols),
        (_, Axis::Rows) => (cols, rows),
    };
    if len == 0 {
        return Err(Error::shape("softmax", "softmax over an empty axis"));
    }
    Ok((groups, len, cols, 1))
}
