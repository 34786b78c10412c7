//! Forward definitions and vector-Jacobian products of every primitive.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Node, Op};
use super::kernels::{self, ConvGeom, MatRef};
use super::{AdError, Graph, Tensor, Var};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        }
    }
}

/// Result shape of an elementwise op: equal shapes, or one side rank-0.
fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>, AdError> {
    if a.shape() == b.shape() || b.rank() == 0 {
        Ok(a.shape().to_vec())
    } else if a.rank() == 0 {
        Ok(b.shape().to_vec())
    } else {
        Err(AdError::shape(op, a.shape(), b.shape()))
    }
}

fn at(t: &Tensor, i: usize) -> f64 {
    if t.rank() == 0 {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize), AdError> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(AdError::invalid(op, alloc::format!("expected rank 2, got {:?}", t.shape()))),
    }
}

fn chw_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize), AdError> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(AdError::invalid(op, alloc::format!("expected C×H×W, got {:?}", t.shape()))),
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) for strided copies.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn transpose_data(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

impl Graph {
    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, AdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast(kind.name(), ta, tb)?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| kind.apply(at(ta, i), at(tb, i))).collect();
        let value = Tensor::from_parts(shape, data);
        let op = match kind {
            Binary::Add => Op::Add(a, b),
            Binary::Sub => Op::Sub(a, b),
            Binary::Mul => Op::Mul(a, b),
        };
        Ok(self.push_op(value, &[a, b], op))
    }

    /// Elementwise sum; either side may be a rank-0 scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v + s);
        self.push_op(value, &[a], Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        self.push_op(value, &[a], Op::MulScalar(a, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims("matmul", ta)?;
        let (k2, n) = matrix_dims("matmul", tb)?;
        if k != k2 {
            return Err(AdError::shape("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(1.0, MatRef::new(ta.data(), m, k), MatRef::new(tb.data(), k, n), 0.0, &mut out);
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self.push_op(value, &[a, b], Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AdError> {
        let t = self.value(a);
        let (r, c) = matrix_dims("transpose", t)?;
        let value = Tensor::from_parts(vec![c, r], transpose_data(t.data(), r, c));
        Ok(self.push_op(value, &[a], Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AdError> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push_op(value, &[a], Op::Reshape(a)))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, AdError> {
        let t = self.value(a);
        if axis >= t.rank() || start + len > t.shape()[axis] {
            return Err(AdError::invalid(
                "narrow",
                alloc::format!("range {start}..{} on axis {axis} of {:?}", start + len, t.shape()),
            ));
        }
        let (outer, extent, inner) = axis_split(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::from_parts(shape, data);
        Ok(self.push_op(value, &[a], Op::Narrow { src: a, axis, start }))
    }

    /// Joins tensors that agree on every axis except `axis`.
    pub fn concat(&mut self, srcs: &[Var], axis: usize) -> Result<Var, AdError> {
        let first = srcs
            .first()
            .ok_or_else(|| AdError::invalid("concat", "no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(AdError::invalid("concat", alloc::format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &s in srcs {
            let sh = self.value(s).shape();
            let agrees = sh.len() == base.len()
                && sh.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !agrees {
                return Err(AdError::shape("concat", &base, sh));
            }
            total += sh[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &s in srcs {
                let t = self.value(s);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::from_parts(shape, data);
        Ok(self.push_op(value, srcs, Op::Concat { srcs: srcs.to_vec(), axis }))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::tanh);
        self.push_op(value, &[a], Op::Tanh(a))
    }

    /// Softmax over the last axis of a rank-2 tensor.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, AdError> {
        let t = self.value(a);
        let (r, c) = matrix_dims("softmax_rows", t)?;
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = libm::exp(*v - max);
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let value = Tensor::from_parts(vec![r, c], data);
        Ok(self.push_op(value, &[a], Op::SoftmaxRows(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push_op(Tensor::scalar(s), &[a], Op::Sum(a))
    }

    /// `Σᵢ (aᵢ − bᵢ)²`, sum-reduced.
    pub fn sq_l2(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(AdError::shape("sq_l2", ta.shape(), tb.shape()));
        }
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(self.push_op(Tensor::scalar(s), &[a, b], Op::SqL2(a, b)))
    }

    /// Square-kernel convolution of a `C×H×W` map with `O×C×k×k` weights and
    /// an `O` bias, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var, AdError> {
        let (c, h, wd) = chw_dims("conv2d", self.value(x))?;
        let ws = self.value(w).shape().to_vec();
        let [o, wc, k, k2] = ws[..] else {
            return Err(AdError::invalid("conv2d", alloc::format!("weights must be O×C×k×k, got {ws:?}")));
        };
        if wc != c || k != k2 {
            return Err(AdError::shape("conv2d", self.value(x).shape(), &ws));
        }
        if self.value(b).shape() != [o] {
            return Err(AdError::shape("conv2d", &[o], self.value(b).shape()));
        }
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(AdError::invalid("conv2d", "kernel does not fit the padded input"));
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
        };
        let (oh, ow) = geom.out_hw();
        let col = kernels::im2col(self.value(x).data(), &geom);
        let kk = geom.col_rows();
        let n = oh * ow;
        let mut out = vec![0.0; o * n];
        for (row, bias) in out.chunks_mut(n).zip(self.value(b).data()) {
            row.fill(*bias);
        }
        kernels::gemm(
            1.0,
            MatRef::new(self.value(w).data(), o, kk),
            MatRef::new(&col, kk, n),
            1.0,
            &mut out,
        );
        let value = Tensor::from_parts(vec![o, oh, ow], out);
        // The patch matrix is only needed for the weight gradient.
        let col = if self.requires_grad(w) { col } else { Vec::new() };
        Ok(self.push_op(value, &[x, w, b], Op::Conv2d { x, w, b, geom, col }))
    }

    /// Per-pixel channel mixing: `C_in×H×W` with `C_out×C_in` weights and a
    /// `C_out` bias.
    pub fn conv_1x1(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AdError> {
        let (c, h, wd) = chw_dims("conv_1x1", self.value(x))?;
        let (o, wc) = matrix_dims("conv_1x1", self.value(w))?;
        if wc != c {
            return Err(AdError::shape("conv_1x1", self.value(x).shape(), self.value(w).shape()));
        }
        if self.value(b).shape() != [o] {
            return Err(AdError::shape("conv_1x1", &[o], self.value(b).shape()));
        }
        let n = h * wd;
        let mut out = vec![0.0; o * n];
        for (row, bias) in out.chunks_mut(n).zip(self.value(b).data()) {
            row.fill(*bias);
        }
        kernels::gemm(
            1.0,
            MatRef::new(self.value(w).data(), o, c),
            MatRef::new(self.value(x).data(), c, n),
            1.0,
            &mut out,
        );
        let value = Tensor::from_parts(vec![o, h, wd], out);
        Ok(self.push_op(value, &[x, w, b], Op::Conv1x1 { x, w, b }))
    }

    /// Align-corners bilinear resampling of every channel to `out_h × out_w`.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var, AdError> {
        let (c, h, w) = chw_dims("bilinear_resize", self.value(x))?;
        if out_h == 0 || out_w == 0 {
            return Err(AdError::invalid("bilinear_resize", "target extent must be at least 1"));
        }
        let ty = kernels::resize_taps(h, out_h);
        let tx = kernels::resize_taps(w, out_w);
        let src = self.value(x).data();
        let mut out = vec![0.0; c * out_h * out_w];
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            let dst = &mut out[ch * out_h * out_w..(ch + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = (1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
                    let bot = (1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
                    dst[oy * out_w + ox] = (1.0 - fy) * top + fy * bot;
                }
            }
        }
        let value = Tensor::from_parts(vec![c, out_h, out_w], out);
        Ok(self.push_op(value, &[x], Op::Resize { x }))
    }

    /// Axis-angle 3-vector to a 3×3 rotation matrix.
    pub fn rodrigues(&mut self, r: Var) -> Result<Var, AdError> {
        let t = self.value(r);
        if t.numel() != 3 {
            return Err(AdError::invalid("rodrigues", alloc::format!("expected 3 values, got {:?}", t.shape())));
        }
        let d = t.data();
        let m = kernels::rodrigues_matrix([d[0], d[1], d[2]]);
        let value = Tensor::from_parts(vec![3, 3], m.to_vec());
        Ok(self.push_op(value, &[r], Op::Rodrigues(r)))
    }

    /// Pinhole projection of `N×3` points after translating by the 3-vector
    /// `t`; pixel offsets are relative to the principal point (add it
    /// afterwards).
    pub fn project(&mut self, points: Var, t: Var, focal: f64) -> Result<Var, AdError> {
        let (n, three) = matrix_dims("project", self.value(points))?;
        if three != 3 || self.value(t).numel() != 3 {
            return Err(AdError::shape("project", self.value(points).shape(), self.value(t).shape()));
        }
        let p = self.value(points).data();
        let tt = self.value(t).data();
        let mut out = Vec::with_capacity(n * 2);
        for i in 0..n {
            let depth = p[i * 3 + 2] + tt[2];
            if !(depth > crate::camera::MIN_DEPTH) {
                return Err(AdError::NonPositiveDepth { index: i, depth });
            }
            out.push(focal * (p[i * 3] + tt[0]) / depth);
            out.push(focal * (p[i * 3 + 1] + tt[1]) / depth);
        }
        let value = Tensor::from_parts(vec![n, 2], out);
        Ok(self.push_op(value, &[points, t], Op::Project { points, t, focal }))
    }
}

fn accumulate(nodes: &[Node], pending: &mut [Option<Tensor>], v: Var, contribution: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut pending[v.0] {
        Some(acc) => acc.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

/// Gradient of a binary op's operand, summed down if it was a broadcast scalar.
fn reduce_to(operand: &Tensor, g: Vec<f64>, out_shape: &[usize]) -> Tensor {
    if operand.shape() == out_shape {
        Tensor::from_parts(out_shape.to_vec(), g)
    } else {
        Tensor::from_parts(operand.shape().to_vec(), vec![g.iter().sum()])
    }
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}

pub(crate) fn backprop(nodes: &[Node], idx: usize, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let out = &nodes[idx].value;
    let gd = g.data();
    let val = |v: Var| &nodes[v.0].value;
    match &nodes[idx].op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(nodes[idx].op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if wants(nodes, *a) {
                let t = reduce_to(val(*a), gd.to_vec(), out.shape());
                accumulate(nodes, pending, *a, t);
            }
            if wants(nodes, *b) {
                let t = reduce_to(val(*b), gd.iter().map(|x| sign * x).collect(), out.shape());
                accumulate(nodes, pending, *b, t);
            }
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            if wants(nodes, *a) {
                let d = gd.iter().enumerate().map(|(i, x)| x * at(tb, i)).collect();
                accumulate(nodes, pending, *a, reduce_to(ta, d, out.shape()));
            }
            if wants(nodes, *b) {
                let d = gd.iter().enumerate().map(|(i, x)| x * at(ta, i)).collect();
                accumulate(nodes, pending, *b, reduce_to(tb, d, out.shape()));
            }
        }
        Op::AddScalar(a) => accumulate(nodes, pending, *a, g.clone()),
        Op::MulScalar(a, s) => accumulate(nodes, pending, *a, g.map(|x| x * s)),
        Op::Matmul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k) = (ta.shape()[0], ta.shape()[1]);
            let n = tb.shape()[1];
            let gm = MatRef::new(gd, m, n);
            if wants(nodes, *a) {
                let mut d = vec![0.0; m * k];
                kernels::gemm(1.0, gm, MatRef::new(tb.data(), k, n).t(), 0.0, &mut d);
                accumulate(nodes, pending, *a, Tensor::from_parts(vec![m, k], d));
            }
            if wants(nodes, *b) {
                let mut d = vec![0.0; k * n];
                kernels::gemm(1.0, MatRef::new(ta.data(), m, k).t(), gm, 0.0, &mut d);
                accumulate(nodes, pending, *b, Tensor::from_parts(vec![k, n], d));
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            let d = transpose_data(gd, r, c);
            accumulate(nodes, pending, *a, Tensor::from_parts(vec![c, r], d));
        }
        Op::Reshape(a) => {
            let t = Tensor::from_parts(val(*a).shape().to_vec(), gd.to_vec());
            accumulate(nodes, pending, *a, t);
        }
        Op::Narrow { src, axis, start } => {
            let shape = val(*src).shape();
            let (outer, extent, inner) = axis_split(shape, *axis);
            let len = out.shape()[*axis];
            let mut d = vec![0.0; shape.iter().product()];
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                d[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(nodes, pending, *src, Tensor::from_parts(shape.to_vec(), d));
        }
        Op::Concat { srcs, axis } => {
            let (outer, total, inner) = axis_split(out.shape(), *axis);
            let mut offset = 0;
            for &s in srcs {
                let shape = val(s).shape();
                let len = shape[*axis];
                if wants(nodes, s) {
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&gd[base..base + len * inner]);
                    }
                    accumulate(nodes, pending, s, Tensor::from_parts(shape.to_vec(), d));
                }
                offset += len;
            }
        }
        Op::Tanh(a) => {
            let d = gd.iter().zip(out.data()).map(|(x, y)| x * (1.0 - y * y)).collect();
            accumulate(nodes, pending, *a, Tensor::from_parts(out.shape().to_vec(), d));
        }
        Op::SoftmaxRows(a) => {
            let c = out.shape()[1];
            let mut d = vec![0.0; out.numel()];
            for ((dr, yr), gr) in d.chunks_mut(c).zip(out.data().chunks(c)).zip(gd.chunks(c)) {
                let inner: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for ((o, y), g) in dr.iter_mut().zip(yr).zip(gr) {
                    *o = y * (g - inner);
                }
            }
            accumulate(nodes, pending, *a, Tensor::from_parts(out.shape().to_vec(), d));
        }
        Op::Sum(a) => {
            let t = Tensor::full(val(*a).shape(), gd[0]);
            accumulate(nodes, pending, *a, t);
        }
        Op::SqL2(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let diff: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| 2.0 * gd[0] * (x - y)).collect();
            if wants(nodes, *b) {
                let neg = diff.iter().map(|x| -x).collect();
                accumulate(nodes, pending, *b, Tensor::from_parts(tb.shape().to_vec(), neg));
            }
            if wants(nodes, *a) {
                accumulate(nodes, pending, *a, Tensor::from_parts(ta.shape().to_vec(), diff));
            }
        }
        Op::Conv2d { x, w, b, geom, col } => {
            let o = out.shape()[0];
            let n = out.shape()[1] * out.shape()[2];
            let kk = geom.col_rows();
            let gm = MatRef::new(gd, o, n);
            if wants(nodes, *b) {
                let d = gd.chunks(n).map(|row| row.iter().sum()).collect();
                accumulate(nodes, pending, *b, Tensor::from_parts(vec![o], d));
            }
            if wants(nodes, *w) {
                let mut d = vec![0.0; o * kk];
                kernels::gemm(1.0, gm, MatRef::new(col, kk, n).t(), 0.0, &mut d);
                accumulate(nodes, pending, *w, Tensor::from_parts(val(*w).shape().to_vec(), d));
            }
            if wants(nodes, *x) {
                let mut dcol = vec![0.0; kk * n];
                kernels::gemm(1.0, MatRef::new(val(*w).data(), o, kk).t(), gm, 0.0, &mut dcol);
                let d = kernels::col2im(&dcol, geom);
                accumulate(nodes, pending, *x, Tensor::from_parts(val(*x).shape().to_vec(), d));
            }
        }
        Op::Conv1x1 { x, w, b } => {
            let (tx, tw) = (val(*x), val(*w));
            let (o, c) = (tw.shape()[0], tw.shape()[1]);
            let n = out.shape()[1] * out.shape()[2];
            let gm = MatRef::new(gd, o, n);
            if wants(nodes, *b) {
                let d = gd.chunks(n).map(|row| row.iter().sum()).collect();
                accumulate(nodes, pending, *b, Tensor::from_parts(vec![o], d));
            }
            if wants(nodes, *w) {
                let mut d = vec![0.0; o * c];
                kernels::gemm(1.0, gm, MatRef::new(tx.data(), c, n).t(), 0.0, &mut d);
                accumulate(nodes, pending, *w, Tensor::from_parts(vec![o, c], d));
            }
            if wants(nodes, *x) {
                let mut d = vec![0.0; c * n];
                kernels::gemm(1.0, MatRef::new(tw.data(), o, c).t(), gm, 0.0, &mut d);
                accumulate(nodes, pending, *x, Tensor::from_parts(tx.shape().to_vec(), d));
            }
        }
        Op::Resize { x } => {
            let src = val(*x);
            let (c, h, w) = (src.shape()[0], src.shape()[1], src.shape()[2]);
            let (oh, ow) = (out.shape()[1], out.shape()[2]);
            let ty = kernels::resize_taps(h, oh);
            let tx = kernels::resize_taps(w, ow);
            let mut d = vec![0.0; src.numel()];
            for ch in 0..c {
                let plane = &mut d[ch * h * w..(ch + 1) * h * w];
                let gp = &gd[ch * oh * ow..(ch + 1) * oh * ow];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let gv = gp[oy * ow + ox];
                        plane[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * gv;
                        plane[y0 * w + x1] += (1.0 - fy) * fx * gv;
                        plane[y1 * w + x0] += fy * (1.0 - fx) * gv;
                        plane[y1 * w + x1] += fy * fx * gv;
                    }
                }
            }
            accumulate(nodes, pending, *x, Tensor::from_parts(src.shape().to_vec(), d));
        }
        Op::Rodrigues(r) => {
            let t = val(*r);
            let d = t.data();
            let v = kernels::rodrigues_vjp([d[0], d[1], d[2]], gd);
            accumulate(nodes, pending, *r, Tensor::from_parts(t.shape().to_vec(), v.to_vec()));
        }
        Op::Project { points, t, focal } => {
            let (tp, tt) = (val(*points), val(*t));
            let p = tp.data();
            let tr = tt.data();
            let n = tp.shape()[0];
            let mut dp = vec![0.0; n * 3];
            let mut dt = [0.0; 3];
            for i in 0..n {
                let depth = p[i * 3 + 2] + tr[2];
                let x = p[i * 3] + tr[0];
                let y = p[i * 3 + 1] + tr[1];
                let (gu, gv) = (gd[i * 2], gd[i * 2 + 1]);
                let dx = focal * gu / depth;
                let dy = focal * gv / depth;
                let dz = -focal * (x * gu + y * gv) / (depth * depth);
                dp[i * 3] = dx;
                dp[i * 3 + 1] = dy;
                dp[i * 3 + 2] = dz;
                dt[0] += dx;
                dt[1] += dy;
                dt[2] += dz;
            }
            if wants(nodes, *points) {
                accumulate(nodes, pending, *points, Tensor::from_parts(tp.shape().to_vec(), dp));
            }
            if wants(nodes, *t) {
                accumulate(nodes, pending, *t, Tensor::from_parts(tt.shape().to_vec(), dt.to_vec()));
            }
        }
    }
}
