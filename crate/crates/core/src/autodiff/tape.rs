//! Wengert-list reverse-mode differentiation.
//!
//! Every primitive evaluates eagerly and appends a node. Nodes whose inputs
//! do not require gradients are stored as constants, so backward only walks
//! the part of the graph that leads to a trainable leaf.

use super::tensor::{self, Real, Tensor};
use crate::error::{AmnError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary elementwise op is broadcast.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    /// `[1, n]` repeated over every row.
    Row(usize),
    /// `[m, 1]` repeated over every column; holds the column count.
    Col(usize),
}

impl Bcast {
    fn resolve(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Bcast::Same);
        }
        let b_len: usize = b.iter().product();
        if b_len == 1 {
            return Ok(Bcast::Scalar);
        }
        let a_cols = *a.last().unwrap();
        let a_rows: usize = a.iter().product::<usize>() / a_cols;
        if b.len() == 2 && b[0] == 1 && b[1] == a_cols {
            return Ok(Bcast::Row(a_cols));
        }
        if a.len() == 2 && b.len() == 2 && b[1] == 1 && b[0] == a_rows {
            return Ok(Bcast::Col(a_cols));
        }
        Err(AmnError::shape(op, a, b))
    }

    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Row(n) => i % n,
            Bcast::Col(n) => i / n,
        }
    }
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, F),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Sum(Var),
    Mean(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    Softmax(Var, Option<Vec<bool>>),
    LogSoftmax(Var),
    GatherRows(Var, Vec<usize>),
    Cosine(Var, Var),
    Dot(Var, Var),
    Reshape(Var),
    Transpose(Var),
    Pick(Var, usize),
}

#[derive(Clone, Debug)]
struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient with respect to `var`; zeros when `var` does not influence
    /// the loss.
    pub fn wrt(&self, var: Var) -> Tensor<F> {
        let shape = &self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

fn accumulate<F: Real>(slot: &mut Option<Vec<F>>, len: usize) -> &mut Vec<F> {
    slot.get_or_insert_with(|| vec![F::zero(); len])
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, op: Op<F>, inputs: &[Var], value: Tensor<F>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AmnError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == F::zero() {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), &[a, b], value))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
    ) -> Result<(Tensor<F>, Bcast)> {
        let bc = Bcast::resolve(name, self.shape(a), self.shape(b))?;
        let av = self.value(a);
        let bd = self.value(b).data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[bc.index(i)]))
            .collect();
        Ok((Tensor::new(av.shape().to_vec(), data)?, bc))
    }

    /// Elementwise sum. `b` may equal `a` in shape or broadcast as a scalar,
    /// a `[1, n]` row, or an `[m, 1]` column.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bc) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b, bc), &[a, b], value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bc) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b, bc), &[a, b], value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bc) = self.binary("elementwise_mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b, bc), &[a, b], value))
    }

    /// `s * x` for a single-element tensor `s`; differentiable in both.
    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(AmnError::shape("scalar_mul", self.shape(s), self.shape(x)));
        }
        self.mul(x, s)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let v = self.value(x);
        let value = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&e| e * c).collect(),
        )
        .expect("same shape");
        self.push(Op::Scale(x, c), &[x], value)
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| AmnError::InvalidArgument("concat of zero tensors".into()))?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        let rows: usize = lead.iter().product();
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(AmnError::shape("concat_last_axis", self.shape(first), s));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(Op::Concat(parts.to_vec()), parts, value))
    }

    /// Stacks 2-D tensors with equal column counts along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| AmnError::InvalidArgument("concat_rows of zero tensors".into()))?;
        let cols = self.value(first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(AmnError::shape("concat_rows", self.shape(first), s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), parts, value))
    }

    /// Rows `start..start + len` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || len == 0 || start + len > s[0] {
            return Err(AmnError::shape("slice_rows", s, &[start, len]));
        }
        let cols = s[1];
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::new(vec![len, cols], data)?;
        Ok(self.push(Op::SliceRows(x, start), &[x], value))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: F = self.value(x).data().iter().copied().sum();
        self.push(Op::Sum(x), &[x], Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: F = v.data().iter().copied().sum::<F>() / F::from_usize(v.len()).unwrap();
        self.push(Op::Mean(x), &[x], Tensor::scalar(s))
    }

    fn unary(&mut self, x: Var, op: Op<F>, f: impl Fn(F) -> F) -> Var {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect())
            .expect("same shape");
        self.push(op, &[x], value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), tensor::sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), F::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |e| e.max(F::zero()))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), F::ln)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None)
    }

    /// Softmax over the last axis where `mask[i] == false` excludes entry
    /// `i`. Rows with no valid entry become uniform and pass no gradient.
    pub fn softmax_masked(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(AmnError::shape(
                "softmax_last_axis",
                self.shape(x),
                &[mask.len()],
            ));
        }
        self.softmax_impl(x, Some(mask))
    }

    fn softmax_impl(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let v = self.value(x);
        let cols = v.cols();
        let mut data = Vec::with_capacity(v.len());
        for r in 0..v.rows() {
            let m = mask.as_ref().map(|m| &m[r * cols..(r + 1) * cols]);
            data.extend(tensor::softmax_row(v.row_slice(r), m));
        }
        let value = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(Op::Softmax(x, mask), &[x], value))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut data = Vec::with_capacity(v.len());
        for r in 0..v.rows() {
            data.extend(tensor::log_softmax_row(v.row_slice(r)));
        }
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(Op::LogSoftmax(x), &[x], value)
    }

    /// Rows `ids` of a 2-D table, in order: `[V, d] -> [ids.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 || ids.is_empty() {
            return Err(AmnError::shape("gather_rows", s, &[ids.len()]));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= s[0]) {
            return Err(AmnError::shape("gather_rows", s, &[bad]));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * s[1]);
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::new(vec![ids.len(), s[1]], data)?;
        Ok(self.push(Op::GatherRows(table, ids.to_vec()), &[table], value))
    }

    /// Cosine similarity of two equally sized tensors, 0 if either is zero.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(AmnError::shape(
                "cosine_similarity",
                self.shape(a),
                self.shape(b),
            ));
        }
        let c = tensor::cosine(self.value(a).data(), self.value(b).data());
        Ok(self.push(Op::Cosine(a, b), &[a, b], Tensor::scalar(c)))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(AmnError::shape("dot", self.shape(a), self.shape(b)));
        }
        let d = tensor::dot(self.value(a).data(), self.value(b).data());
        Ok(self.push(Op::Dot(a, b), &[a, b], Tensor::scalar(d)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self
            .value(x)
            .reshaped(shape)
            .map_err(|_| AmnError::shape("reshape", self.shape(x), shape))?;
        Ok(self.push(Op::Reshape(x), &[x], value))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(AmnError::shape("transpose", s, &[]));
        }
        let (m, n) = (s[0], s[1]);
        let d = self.value(x).data();
        let mut data = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = d[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], data)?;
        Ok(self.push(Op::Transpose(x), &[x], value))
    }

    /// Element `index` of the flattened tensor as a `[1]` scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let v = self.value(x);
        if index >= v.len() {
            return Err(AmnError::shape("pick", v.shape(), &[index]));
        }
        let value = Tensor::scalar(v.data()[index]);
        Ok(self.push(Op::Pick(x, index), &[x], value))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AmnError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![F::one()]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let mut shapes: Vec<Vec<usize>> = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        grads.resize(self.nodes.len(), None);
        shapes.truncate(self.nodes.len());
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, id: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let len = |v: &Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                if needs(a) {
                    let ga = accumulate(&mut grads[a.0], m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] =
                                ga[i * k + p] + tensor::dot(grow, &bd[p * n..(p + 1) * n]);
                        }
                    }
                }
                if needs(b) {
                    let gb = accumulate(&mut grads[b.0], k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == F::zero() {
                                continue;
                            }
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o = *o + av * gv;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -F::one()
                } else {
                    F::one()
                };
                if needs(a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for (o, &gv) in ga.iter_mut().zip(g) {
                        *o = *o + gv;
                    }
                }
                if needs(b) {
                    let gb = accumulate(&mut grads[b.0], len(b));
                    for (i, &gv) in g.iter().enumerate() {
                        let j = bc.index(i);
                        gb[j] = gb[j] + sign * gv;
                    }
                }
            }
            Op::Mul(a, b, bc) => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                if needs(a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for (i, &gv) in g.iter().enumerate() {
                        ga[i] = ga[i] + gv * bd[bc.index(i)];
                    }
                }
                if needs(b) {
                    let gb = accumulate(&mut grads[b.0], len(b));
                    for (i, &gv) in g.iter().enumerate() {
                        let j = bc.index(i);
                        gb[j] = gb[j] + gv * ad[i];
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx = accumulate(&mut grads[x.0], g.len());
                for (o, &gv) in gx.iter_mut().zip(g) {
                    *o = *o + gv * *c;
                }
            }
            Op::Concat(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if needs(p) {
                        let gp = accumulate(&mut grads[p.0], rows * c);
                        for r in 0..rows {
                            for j in 0..c {
                                gp[r * c + j] = gp[r * c + j] + g[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = len(p);
                    if needs(p) {
                        let gp = accumulate(&mut grads[p.0], n);
                        for (o, &gv) in gp.iter_mut().zip(&g[offset..offset + n]) {
                            *o = *o + gv;
                        }
                    }
                    offset += n;
                }
            }
            Op::SliceRows(x, start) => {
                let cols = node.value.cols();
                let gx = accumulate(&mut grads[x.0], len(x));
                let base = start * cols;
                for (i, &gv) in g.iter().enumerate() {
                    gx[base + i] = gx[base + i] + gv;
                }
            }
            Op::Sum(x) => {
                let gx = accumulate(&mut grads[x.0], len(x));
                for o in gx.iter_mut() {
                    *o = *o + g[0];
                }
            }
            Op::Mean(x) => {
                let n = len(x);
                let share = g[0] / F::from_usize(n).unwrap();
                let gx = accumulate(&mut grads[x.0], n);
                for o in gx.iter_mut() {
                    *o = *o + share;
                }
            }
            Op::Sigmoid(x) => {
                let gx = accumulate(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    gx[i] = gx[i] + g[i] * out[i] * (F::one() - out[i]);
                }
            }
            Op::Tanh(x) => {
                let gx = accumulate(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    gx[i] = gx[i] + g[i] * (F::one() - out[i] * out[i]);
                }
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                let gx = accumulate(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    if xd[i] > F::zero() {
                        gx[i] = gx[i] + g[i];
                    }
                }
            }
            Op::Log(x) => {
                let xd = self.value(*x).data();
                let gx = accumulate(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    gx[i] = gx[i] + g[i] / xd[i];
                }
            }
            Op::Softmax(x, mask) => {
                let cols = node.value.cols();
                let gx = accumulate(&mut grads[x.0], g.len());
                for r in 0..node.value.rows() {
                    let span = r * cols..(r + 1) * cols;
                    if let Some(m) = mask {
                        if !m[span.clone()].iter().any(|&v| v) {
                            continue;
                        }
                    }
                    let y = &out[span.clone()];
                    let gr = &g[span.clone()];
                    let inner = tensor::dot(gr, y);
                    for j in 0..cols {
                        gx[r * cols + j] = gx[r * cols + j] + y[j] * (gr[j] - inner);
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let cols = node.value.cols();
                let gx = accumulate(&mut grads[x.0], g.len());
                for r in 0..node.value.rows() {
                    let span = r * cols..(r + 1) * cols;
                    let gsum: F = g[span.clone()].iter().copied().sum();
                    for j in span {
                        gx[j] = gx[j] + g[j] - out[j].exp() * gsum;
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                let cols = node.value.cols();
                let gt = accumulate(&mut grads[table.0], len(table));
                for (r, &i) in ids.iter().enumerate() {
                    for j in 0..cols {
                        gt[i * cols + j] = gt[i * cols + j] + g[r * cols + j];
                    }
                }
            }
            Op::Cosine(a, b) => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                let na = tensor::l2_norm(ad);
                let nb = tensor::l2_norm(bd);
                if na == F::zero() || nb == F::zero() {
                    return;
                }
                let c = out[0];
                let scale = g[0];
                if needs(a) {
                    let ga = accumulate(&mut grads[a.0], ad.len());
                    for i in 0..ad.len() {
                        ga[i] = ga[i] + scale * (bd[i] / (na * nb) - c * ad[i] / (na * na));
                    }
                }
                if needs(b) {
                    let gb = accumulate(&mut grads[b.0], bd.len());
                    for i in 0..bd.len() {
                        gb[i] = gb[i] + scale * (ad[i] / (na * nb) - c * bd[i] / (nb * nb));
                    }
                }
            }
            Op::Dot(a, b) => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                if needs(a) {
                    let ga = accumulate(&mut grads[a.0], ad.len());
                    for i in 0..ad.len() {
                        ga[i] = ga[i] + g[0] * bd[i];
                    }
                }
                if needs(b) {
                    let gb = accumulate(&mut grads[b.0], bd.len());
                    for i in 0..bd.len() {
                        gb[i] = gb[i] + g[0] * ad[i];
                    }
                }
            }
            Op::Reshape(x) => {
                let gx = accumulate(&mut grads[x.0], g.len());
                for (o, &gv) in gx.iter_mut().zip(g) {
                    *o = *o + gv;
                }
            }
            Op::Transpose(x) => {
                let s = self.shape(*x);
                let (m, n) = (s[0], s[1]);
                let gx = accumulate(&mut grads[x.0], m * n);
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] = gx[i * n + j] + g[j * m + i];
                    }
                }
            }
            Op::Pick(x, index) => {
                let gx = accumulate(&mut grads[x.0], len(x));
                gx[*index] = gx[*index] + g[0];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn shape_mismatch_names_primitive_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.variable(t(&[2, 3], &[0.0; 6]));
        let b = tape.variable(t(&[2, 3], &[0.0; 6]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("[2, 3]"), "{err}");
        let c = tape.variable(t(&[3, 2], &[0.0; 6]));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let w = tape.variable(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let loss = tape.sum(w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[1.0; 4]);
    }

    #[test]
    fn dot_self_gradient_is_twice_input() {
        let mut tape = Tape::new();
        let w = tape.variable(t(&[1], &[3.0]));
        let loss = tape.dot(w, w).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[6.0]);
    }

    #[test]
    fn unreachable_variable_gets_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.variable(t(&[3], &[1.0, 2.0, 3.0]));
        let other = tape.variable(t(&[2], &[4.0, 5.0]));
        let loss = tape.sum(w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(other).data(), &[0.0, 0.0]);
        assert!(!g.is_reached(other));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.variable(t(&[2], &[1.0, 2.0]));
        let y = tape.tanh(w);
        assert!(matches!(tape.backward(y), Err(AmnError::NonScalarLoss(_))));
    }

    #[test]
    fn constants_are_not_recorded_as_ops() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.tanh(a);
        assert!(!tape.requires_grad(b));
        assert!(matches!(tape.nodes[b.0].op, Op::Leaf));
    }

    #[test]
    fn softmax_rows_are_simplices() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[2, 3], &[0.1, 5.0, -3.0, 100.0, 100.0, 99.0]));
        let y = tape.softmax(x).unwrap();
        for r in 0..2 {
            let row = tape.value(y).row_slice(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn broadcast_column_and_row() {
        let mut tape = Tape::new();
        let a = tape.variable(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let col = tape.variable(t(&[2, 1], &[10.0, 100.0]));
        let row = tape.variable(t(&[1, 2], &[1.0, -1.0]));
        let m = tape.mul(a, col).unwrap();
        assert_eq!(tape.value(m).data(), &[10.0, 20.0, 300.0, 400.0]);
        let s = tape.add(m, row).unwrap();
        assert_eq!(tape.value(s).data(), &[11.0, 19.0, 301.0, 399.0]);
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(col).data(), &[3.0, 7.0]);
        assert_eq!(g.wrt(row).data(), &[2.0, 2.0]);
    }
}
