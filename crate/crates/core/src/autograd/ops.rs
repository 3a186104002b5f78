//! Differentiable operations: forward evaluation and their backward rules.

use super::{Node, NodeId, Var};
use crate::tensor::kernels::{self, ConvGeom};
use crate::tensor::{Element, Result, Tensor, TensorError};

#[derive(Debug)]
pub(super) enum Op {
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Pow(NodeId, f64),
    Clamp(NodeId, f64, f64),
    Sum(NodeId),
    Mean(NodeId),
    SumAxis(NodeId, usize),
    Reshape(NodeId),
    Narrow { input: NodeId, axis: usize, start: usize },
    Concat { inputs: Vec<NodeId>, axis: usize },
    IndexSelect { input: NodeId, indices: Vec<usize> },
    Conv2d { x: NodeId, w: NodeId, b: Option<NodeId> },
    Depthwise { x: NodeId, w: NodeId },
    MaxPool2 { x: NodeId, argmax: Vec<u32> },
    ConvTranspose2 { x: NodeId, w: NodeId, b: Option<NodeId> },
    Softmax { input: NodeId, axis: usize },
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
}

impl Op {
    pub(super) fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            AddScalar(a) | MulScalar(a, _) | Relu(a) | Sigmoid(a) | Tanh(a) | Log(a) | Exp(a)
            | Pow(a, _) | Clamp(a, _, _) | Sum(a) | Mean(a) | SumAxis(a, _) | Reshape(a) => vec![*a],
            Narrow { input, .. } | IndexSelect { input, .. } | Softmax { input, .. } => vec![*input],
            Concat { inputs, .. } => inputs.clone(),
            Conv2d { x, w, b } | ConvTranspose2 { x, w, b } | Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Depthwise { x, w } => vec![*x, *w],
            MaxPool2 { x, .. } => vec![*x],
        }
    }

    /// Gradients for each differentiable input, given the output gradient `g`.
    pub(super) fn backward<E: Element>(
        &self,
        g: &Tensor<E>,
        out: &Tensor<E>,
        nodes: &[Node<E>],
    ) -> Result<Vec<(NodeId, Tensor<E>)>> {
        let val = |i: NodeId| &nodes[i].value;
        let needs = |i: NodeId| nodes[i].requires_grad;
        let mut grads = Vec::new();
        let mut emit = |id: NodeId, shape: &[usize], data: Vec<E>| -> Result<()> {
            grads.push((id, Tensor::from_vec(shape, data)?));
            Ok(())
        };
        let gd = g.data();
        let unary = |a: NodeId, f: &dyn Fn(E, E, E) -> E| -> Vec<E> {
            val(a)
                .data()
                .iter()
                .zip(out.data())
                .zip(gd)
                .map(|((&x, &y), &gy)| f(x, y, gy))
                .collect()
        };
        match self {
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self, Op::Sub(..)) { -E::one() } else { E::one() };
                if needs(*a) {
                    emit(*a, val(*a).shape(), kernels::reduce_to(gd, g.shape(), val(*a).shape()))?;
                }
                if needs(*b) {
                    let r = kernels::reduce_to(gd, g.shape(), val(*b).shape());
                    emit(*b, val(*b).shape(), r.into_iter().map(|v| v * sign).collect())?;
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let shape = g.shape();
                let sa = kernels::broadcast_strides(va.shape(), shape);
                let sb = kernels::broadcast_strides(vb.shape(), shape);
                let (need_a, need_b) = (needs(*a), needs(*b));
                let mut ga = vec![E::zero(); if need_a { gd.len() } else { 0 }];
                let mut gb = vec![E::zero(); if need_b { gd.len() } else { 0 }];
                kernels::for_each_broadcast(shape, &sa, &sb, |i, ia, ib| {
                    if need_a {
                        ga[i] = gd[i] * vb.data()[ib];
                    }
                    if need_b {
                        gb[i] = gd[i] * va.data()[ia];
                    }
                });
                if need_a {
                    emit(*a, va.shape(), kernels::reduce_to(&ga, shape, va.shape()))?;
                }
                if need_b {
                    emit(*b, vb.shape(), kernels::reduce_to(&gb, shape, vb.shape()))?;
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => emit(*a, val(*a).shape(), gd.to_vec())?,
            Op::MulScalar(a, s) => {
                let s = E::from_f64_lossy(*s);
                emit(*a, val(*a).shape(), gd.iter().map(|&v| v * s).collect())?
            }
            Op::Relu(a) => {
                let d = unary(*a, &|x, _, gy| if x > E::zero() { gy } else { E::zero() });
                emit(*a, val(*a).shape(), d)?
            }
            Op::Sigmoid(a) => {
                let d = unary(*a, &|_, y, gy| gy * y * (E::one() - y));
                emit(*a, val(*a).shape(), d)?
            }
            Op::Tanh(a) => {
                let d = unary(*a, &|_, y, gy| gy * (E::one() - y * y));
                emit(*a, val(*a).shape(), d)?
            }
            Op::Log(a) => emit(*a, val(*a).shape(), unary(*a, &|x, _, gy| gy / x))?,
            Op::Exp(a) => emit(*a, val(*a).shape(), unary(*a, &|_, y, gy| gy * y))?,
            Op::Pow(a, p) => {
                let pe = E::from_f64_lossy(*p);
                let d = if *p == 0.0 {
                    vec![E::zero(); gd.len()]
                } else {
                    unary(*a, &|x, _, gy| gy * pe * x.powf(pe - E::one()))
                };
                emit(*a, val(*a).shape(), d)?
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (E::from_f64_lossy(*lo), E::from_f64_lossy(*hi));
                let d = unary(*a, &|x, _, gy| if x >= lo && x <= hi { gy } else { E::zero() });
                emit(*a, val(*a).shape(), d)?
            }
            Op::Sum(a) => emit(*a, val(*a).shape(), vec![gd[0]; val(*a).len()])?,
            Op::Mean(a) => {
                let n = E::from_usize(val(*a).len()).expect("length fits");
                emit(*a, val(*a).shape(), vec![gd[0] / n; val(*a).len()])?
            }
            Op::SumAxis(a, axis) => {
                let shape = val(*a).shape();
                let (outer, len, inner) = kernels::axis_split(shape, *axis);
                let mut d = vec![E::zero(); val(*a).len()];
                for o in 0..outer {
                    for k in 0..len {
                        d[(o * len + k) * inner..][..inner].copy_from_slice(&gd[o * inner..][..inner]);
                    }
                }
                emit(*a, shape, d)?
            }
            Op::Narrow { input, axis, start } => {
                let shape = val(*input).shape();
                let (outer, len, inner) = kernels::axis_split(shape, *axis);
                let part = g.shape()[*axis];
                let mut d = vec![E::zero(); val(*input).len()];
                for o in 0..outer {
                    let src = &gd[o * part * inner..][..part * inner];
                    d[(o * len + start) * inner..][..part * inner].copy_from_slice(src);
                }
                emit(*input, shape, d)?
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = kernels::axis_split(g.shape(), *axis);
                let mut offset = 0;
                for &i in inputs {
                    let shape = val(i).shape();
                    let part = shape[*axis];
                    if needs(i) {
                        let mut d = Vec::with_capacity(val(i).len());
                        for o in 0..outer {
                            d.extend_from_slice(&gd[(o * total + offset) * inner..][..part * inner]);
                        }
                        emit(i, shape, d)?;
                    }
                    offset += part;
                }
            }
            Op::IndexSelect { input, indices } => {
                let shape = val(*input).shape();
                let row: usize = shape[1..].iter().product();
                let mut d = vec![E::zero(); val(*input).len()];
                for (k, &src) in indices.iter().enumerate() {
                    for (o, &v) in d[src * row..][..row].iter_mut().zip(&gd[k * row..][..row]) {
                        *o += v;
                    }
                }
                emit(*input, shape, d)?
            }
            Op::Conv2d { x, w, b } => {
                let (vx, vw) = (val(*x), val(*w));
                let geom = conv_geom(vx.shape(), vw.shape());
                let need = [needs(*x), needs(*w), b.is_some_and(needs)];
                let cg = kernels::conv2d_backward(vx.data(), geom, vw.data(), vw.shape()[0], gd, need);
                if let Some(dx) = cg.dx {
                    emit(*x, vx.shape(), dx)?;
                }
                if let Some(dw) = cg.dw {
                    emit(*w, vw.shape(), dw)?;
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    emit(*b, val(*b).shape(), db)?;
                }
            }
            Op::Depthwise { x, w } => {
                let (vx, vw) = (val(*x), val(*w));
                let s = nchw(vx.shape());
                let geom = ConvGeom { n: s[0], c: s[1], h: s[2], w: s[3], kh: vw.shape()[1], kw: vw.shape()[2] };
                let (dx, dw) = kernels::depthwise_backward(vx.data(), geom, vw.data(), gd);
                if needs(*x) {
                    emit(*x, vx.shape(), dx)?;
                }
                if needs(*w) {
                    emit(*w, vw.shape(), dw)?;
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut d = vec![E::zero(); val(*x).len()];
                for (&src, &gv) in argmax.iter().zip(gd) {
                    d[src as usize] += gv;
                }
                emit(*x, val(*x).shape(), d)?
            }
            Op::ConvTranspose2 { x, w, b } => {
                let (vx, vw) = (val(*x), val(*w));
                let s = nchw(vx.shape());
                let need = [needs(*x), needs(*w), b.is_some_and(needs)];
                let cg = kernels::conv_transpose2_backward(
                    vx.data(),
                    s[0],
                    s[1],
                    s[2],
                    s[3],
                    vw.data(),
                    vw.shape()[1],
                    gd,
                    need,
                );
                if let Some(dx) = cg.dx {
                    emit(*x, vx.shape(), dx)?;
                }
                if let Some(dw) = cg.dw {
                    emit(*w, vw.shape(), dw)?;
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    emit(*b, val(*b).shape(), db)?;
                }
            }
            Op::Softmax { input, axis } => {
                let d = kernels::softmax_backward(out.data(), gd, out.shape(), *axis);
                emit(*input, val(*input).shape(), d)?
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (val(*x), val(*w));
                let (n, fin) = (vx.shape()[0], vx.shape()[1]);
                let fout = vw.shape()[0];
                if needs(*x) {
                    let mut dx = vec![E::zero(); n * fin];
                    kernels::gemm(
                        n,
                        fout,
                        fin,
                        E::one(),
                        kernels::MatRef { data: gd, rs: fout, cs: 1 },
                        kernels::MatRef { data: vw.data(), rs: fin, cs: 1 },
                        E::zero(),
                        &mut dx,
                    );
                    emit(*x, vx.shape(), dx)?;
                }
                if needs(*w) {
                    let mut dw = vec![E::zero(); fout * fin];
                    kernels::gemm(
                        fout,
                        n,
                        fin,
                        E::one(),
                        kernels::MatRef { data: gd, rs: 1, cs: fout },
                        kernels::MatRef { data: vx.data(), rs: fin, cs: 1 },
                        E::zero(),
                        &mut dw,
                    );
                    emit(*w, vw.shape(), dw)?;
                }
                if let Some(b) = b.filter(|&b| needs(b)) {
                    let mut db = vec![E::zero(); fout];
                    for row in gd.chunks(fout) {
                        for (o, &v) in db.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    emit(b, val(b).shape(), db)?;
                }
            }
        }
        Ok(grads)
    }
}

/// Views a rank-3 `C×H×W` shape as a batch of one.
fn nchw(shape: &[usize]) -> [usize; 4] {
    match *shape {
        [c, h, w] => [1, c, h, w],
        [n, c, h, w] => [n, c, h, w],
        _ => unreachable!("validated at construction"),
    }
}

fn conv_geom(x: &[usize], w: &[usize]) -> ConvGeom {
    let s = nchw(x);
    ConvGeom { n: s[0], c: s[1], h: s[2], w: s[3], kh: w[2], kw: w[3] }
}

fn spatial(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match shape.len() {
        3 | 4 => Ok(nchw(shape)),
        _ => Err(TensorError::InvalidArgument {
            op,
            detail: format!("expected C×H×W or N×C×H×W input, got {shape:?}"),
        }),
    }
}

fn with_batch_shape(input: &[usize], c: usize, h: usize, w: usize) -> Vec<usize> {
    if input.len() == 3 {
        vec![c, h, w]
    } else {
        vec![input[0], c, h, w]
    }
}

fn map_values<E: Element>(t: &Tensor<E>, f: impl Fn(E) -> E) -> Tensor<E> {
    t.map(f)
}

impl<'t, E: Element> Var<'t, E> {
    fn binary(self, other: Var<'t, E>, name: &'static str, f: impl Fn(E, E) -> E) -> Result<(Tensor<E>, NodeId)> {
        let (a, b) = (self.value(), other.value());
        let shape = kernels::broadcast_shape(a.shape(), b.shape()).ok_or_else(|| TensorError::ShapeMismatch {
                op: name,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })?;
        let data = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let sa = kernels::broadcast_strides(a.shape(), &shape);
            let sb = kernels::broadcast_strides(b.shape(), &shape);
            let mut out = vec![E::zero(); shape.iter().product()];
            kernels::for_each_broadcast(&shape, &sa, &sb, |i, ia, ib| out[i] = f(a.data()[ia], b.data()[ib]));
            out
        };
        Ok((Tensor::from_vec(&shape, data)?, other.id))
    }

    /// Elementwise sum; shapes must match or broadcast (size-1 axes, single-element scalars).
    pub fn add(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let (v, b) = self.binary(other, "add", |x, y| x + y)?;
        self.tape.record("add", v, Op::Add(self.id, b))
    }

    pub fn sub(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let (v, b) = self.binary(other, "sub", |x, y| x - y)?;
        self.tape.record("sub", v, Op::Sub(self.id, b))
    }

    pub fn mul(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let (v, b) = self.binary(other, "mul", |x, y| x * y)?;
        self.tape.record("mul", v, Op::Mul(self.id, b))
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t, E>> {
        let se = E::from_f64_lossy(s);
        let v = map_values(&self.value(), |x| x + se);
        self.tape.record("add_scalar", v, Op::AddScalar(self.id))
    }

    pub fn mul_scalar(self, s: f64) -> Result<Var<'t, E>> {
        let se = E::from_f64_lossy(s);
        let v = map_values(&self.value(), |x| x * se);
        self.tape.record("mul_scalar", v, Op::MulScalar(self.id, s))
    }

    pub fn neg(self) -> Result<Var<'t, E>> {
        self.mul_scalar(-1.0)
    }

    /// `1 − x`
    pub fn one_minus(self) -> Result<Var<'t, E>> {
        self.mul_scalar(-1.0)?.add_scalar(1.0)
    }

    pub fn relu(self) -> Result<Var<'t, E>> {
        let v = map_values(&self.value(), |x| x.max(E::zero()));
        self.tape.record("relu", v, Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Result<Var<'t, E>> {
        let v = map_values(&self.value(), |x| {
            if x >= E::zero() {
                E::one() / (E::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (E::one() + e)
            }
        });
        self.tape.record("sigmoid", v, Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Result<Var<'t, E>> {
        let v = map_values(&self.value(), |x| x.tanh());
        self.tape.record("tanh", v, Op::Tanh(self.id))
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(self) -> Result<Var<'t, E>> {
        let x = self.value();
        if let Some(bad) = x.data().iter().find(|&&v| !(v > E::zero())) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        self.tape.record("log", map_values(&x, |v| v.ln()), Op::Log(self.id))
    }

    pub fn exp(self) -> Result<Var<'t, E>> {
        let v = map_values(&self.value(), |x| x.exp());
        self.tape.record("exp", v, Op::Exp(self.id))
    }

    /// `x^p` for a scalar exponent.
    pub fn pow(self, p: f64) -> Result<Var<'t, E>> {
        let pe = E::from_f64_lossy(p);
        let v = map_values(&self.value(), |x| if p == 0.0 { E::one() } else { x.powf(pe) });
        self.tape.record("pow", v, Op::Pow(self.id, p))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t, E>> {
        let (l, h) = (E::from_f64_lossy(lo), E::from_f64_lossy(hi));
        let v = map_values(&self.value(), |x| x.max(l).min(h));
        self.tape.record("clamp", v, Op::Clamp(self.id, lo, hi))
    }

    pub fn sum(self) -> Result<Var<'t, E>> {
        let v = Tensor::scalar(self.value().sum());
        self.tape.record("sum", v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Var<'t, E>> {
        let x = self.value();
        let n = E::from_usize(x.len()).expect("length fits");
        self.tape.record("mean", Tensor::scalar(x.sum() / n), Op::Mean(self.id))
    }

    /// Sums out `axis`, dropping it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, E>> {
        let x = self.value();
        check_axis("sum_axis", x.shape(), axis)?;
        let (outer, len, inner) = kernels::axis_split(x.shape(), axis);
        let mut out = vec![E::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x.data()[(o * len + k) * inner..][..inner];
                for (d, &v) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.tape.record("sum_axis", Tensor::from_vec(&shape, out)?, Op::SumAxis(self.id, axis))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, E>> {
        let v = self.value().reshape(shape)?;
        self.tape.record("reshape", v, Op::Reshape(self.id))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, E>> {
        let x = self.value();
        check_axis("narrow", x.shape(), axis)?;
        if len == 0 || start + len > x.shape()[axis] {
            return Err(TensorError::InvalidArgument {
                op: "narrow",
                detail: format!("range {start}..{} outside axis of length {}", start + len, x.shape()[axis]),
            });
        }
        let (outer, full, inner) = kernels::axis_split(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x.data()[(o * full + start) * inner..][..len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        self.tape
            .record("narrow", Tensor::from_vec(&shape, out)?, Op::Narrow { input: self.id, axis, start })
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, E>], axis: usize) -> Result<Var<'t, E>> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let values: Vec<Tensor<E>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        check_axis("concat", &base, axis)?;
        for v in &values[1..] {
            let s = v.shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(TensorError::ShapeMismatch { op: "concat", lhs: base.clone(), rhs: s.to_vec() });
            }
        }
        let (outer, _, inner) = kernels::axis_split(&base, axis);
        let total: usize = values.iter().map(|v| v.shape()[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let part = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * part..][..part]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        first.tape.record(
            "concat",
            Tensor::from_vec(&shape, out)?,
            Op::Concat { inputs: parts.iter().map(|p| p.id).collect(), axis },
        )
    }

    /// Gathers rows of the leading axis (repeats allowed).
    pub fn index_select(self, indices: &[usize]) -> Result<Var<'t, E>> {
        let x = self.value();
        let rows = x.shape()[0];
        if indices.is_empty() || indices.iter().any(|&i| i >= rows) {
            return Err(TensorError::InvalidArgument {
                op: "index_select",
                detail: format!("indices {indices:?} invalid for {rows} rows"),
            });
        }
        let row: usize = x.shape()[1..].iter().product();
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            out.extend_from_slice(&x.data()[i * row..][..row]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = indices.len();
        self.tape.record(
            "index_select",
            Tensor::from_vec(&shape, out)?,
            Op::IndexSelect { input: self.id, indices: indices.to_vec() },
        )
    }

    /// Stride-1 cross-correlation with zero "same" padding.
    ///
    /// Input `C×H×W` or `N×C×H×W`, kernel `C_out×C_in×k_h×k_w` with odd extents,
    /// optional bias `C_out`.
    pub fn conv2d(self, kernel: Var<'t, E>, bias: Option<Var<'t, E>>) -> Result<Var<'t, E>> {
        let (x, w) = (self.value(), kernel.value());
        let [n, c, h, wd] = spatial("conv2d", x.shape())?;
        let ws = w.shape();
        if ws.len() != 4 || ws[1] != c {
            return Err(TensorError::ShapeMismatch { op: "conv2d", lhs: x.shape().to_vec(), rhs: ws.to_vec() });
        }
        if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                detail: format!("kernel extents must be odd, got {}×{}", ws[2], ws[3]),
            });
        }
        let out_c = ws[0];
        let b = bias.map(|b| b.value());
        if let Some(b) = &b {
            if b.shape() != [out_c] {
                return Err(TensorError::ShapeMismatch { op: "conv2d", lhs: vec![out_c], rhs: b.shape().to_vec() });
            }
        }
        let geom = ConvGeom { n, c, h, w: wd, kh: ws[2], kw: ws[3] };
        let out = kernels::conv2d_forward(x.data(), geom, w.data(), out_c, b.as_ref().map(|b| b.data()));
        let shape = with_batch_shape(x.shape(), out_c, h, wd);
        self.tape.record(
            "conv2d",
            Tensor::from_vec(&shape, out)?,
            Op::Conv2d { x: self.id, w: kernel.id, b: bias.map(|b| b.id) },
        )
    }

    /// Per-channel same-padded convolution, kernel `C×k_h×k_w` (odd extents), no bias.
    pub fn depthwise_conv2d(self, kernel: Var<'t, E>) -> Result<Var<'t, E>> {
        let (x, w) = (self.value(), kernel.value());
        let [n, c, h, wd] = spatial("depthwise_conv2d", x.shape())?;
        let ws = w.shape();
        if ws.len() != 3 || ws[0] != c {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv2d",
                lhs: x.shape().to_vec(),
                rhs: ws.to_vec(),
            });
        }
        if ws[1] % 2 == 0 || ws[2] % 2 == 0 {
            return Err(TensorError::InvalidArgument {
                op: "depthwise_conv2d",
                detail: format!("kernel extents must be odd, got {}×{}", ws[1], ws[2]),
            });
        }
        let geom = ConvGeom { n, c, h, w: wd, kh: ws[1], kw: ws[2] };
        let out = kernels::depthwise_forward(x.data(), geom, w.data());
        self.tape.record(
            "depthwise_conv2d",
            Tensor::from_vec(x.shape(), out)?,
            Op::Depthwise { x: self.id, w: kernel.id },
        )
    }

    /// 2×2 max pooling with stride 2; spatial extents must be even.
    pub fn maxpool2(self) -> Result<Var<'t, E>> {
        let x = self.value();
        let [n, c, h, w] = spatial("maxpool2", x.shape())?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::InvalidArgument {
                op: "maxpool2",
                detail: format!("spatial extents must be even, got {h}×{w}"),
            });
        }
        let (out, argmax) = kernels::maxpool2_forward(x.data(), n, c, h, w);
        let shape = with_batch_shape(x.shape(), c, h / 2, w / 2);
        self.tape
            .record("maxpool2", Tensor::from_vec(&shape, out)?, Op::MaxPool2 { x: self.id, argmax })
    }

    /// Exact ×2 upsampling by a 2×2, stride-2 transposed convolution.
    ///
    /// Kernel `C_in×C_out×2×2`, optional bias `C_out`.
    pub fn conv_transpose2(self, kernel: Var<'t, E>, bias: Option<Var<'t, E>>) -> Result<Var<'t, E>> {
        let (x, w) = (self.value(), kernel.value());
        let [n, c, h, wd] = spatial("conv_transpose2", x.shape())?;
        let ws = w.shape();
        if ws.len() != 4 || ws[0] != c {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2",
                lhs: x.shape().to_vec(),
                rhs: ws.to_vec(),
            });
        }
        if ws[2] != 2 || ws[3] != 2 {
            return Err(TensorError::InvalidArgument {
                op: "conv_transpose2",
                detail: format!("only a 2×2 kernel at stride 2 doubles exactly, got {}×{}", ws[2], ws[3]),
            });
        }
        let out_c = ws[1];
        let b = bias.map(|b| b.value());
        if let Some(b) = &b {
            if b.shape() != [out_c] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv_transpose2",
                    lhs: vec![out_c],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let out =
            kernels::conv_transpose2_forward(x.data(), n, c, h, wd, w.data(), out_c, b.as_ref().map(|b| b.data()));
        let shape = with_batch_shape(x.shape(), out_c, 2 * h, 2 * wd);
        self.tape.record(
            "conv_transpose2",
            Tensor::from_vec(&shape, out)?,
            Op::ConvTranspose2 { x: self.id, w: kernel.id, b: bias.map(|b| b.id) },
        )
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, E>> {
        let x = self.value();
        check_axis("softmax", x.shape(), axis)?;
        if !x.all_finite() {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let out = kernels::softmax_forward(x.data(), x.shape(), axis);
        self.tape
            .record("softmax", Tensor::from_vec(x.shape(), out)?, Op::Softmax { input: self.id, axis })
    }

    /// Softmax over the channel axis of a `C×H×W` or `N×C×H×W` map.
    pub fn softmax_over_channels(self) -> Result<Var<'t, E>> {
        let rank = self.shape().len();
        spatial("softmax_over_channels", &self.shape())?;
        self.softmax(rank - 3)
    }

    /// `x·Wᵀ + b` for `x: N×in`, `W: out×in`, `b: out`.
    pub fn linear(self, weight: Var<'t, E>, bias: Option<Var<'t, E>>) -> Result<Var<'t, E>> {
        let (x, w) = (self.value(), weight.value());
        if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[1] {
            return Err(TensorError::ShapeMismatch { op: "linear", lhs: x.shape().to_vec(), rhs: w.shape().to_vec() });
        }
        let (n, fin, fout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        let mut out = vec![E::zero(); n * fout];
        kernels::gemm(
            n,
            fin,
            fout,
            E::one(),
            kernels::MatRef { data: x.data(), rs: fin, cs: 1 },
            kernels::MatRef { data: w.data(), rs: 1, cs: fin },
            E::zero(),
            &mut out,
        );
        if let Some(b) = bias {
            let bv = b.value();
            if bv.shape() != [fout] {
                return Err(TensorError::ShapeMismatch { op: "linear", lhs: vec![fout], rhs: bv.shape().to_vec() });
            }
            for row in out.chunks_mut(fout) {
                for (o, &v) in row.iter_mut().zip(bv.data()) {
                    *o += v;
                }
            }
        }
        self.tape.record(
            "linear",
            Tensor::from_vec(&[n, fout], out)?,
            Op::Linear { x: self.id, w: weight.id, b: bias.map(|b| b.id) },
        )
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidArgument {
            op,
            detail: format!("axis {axis} out of range for {shape:?}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use crate::autograd::Tape;
    use crate::tensor::{Tensor, TensorError};

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn elementwise_definitions() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[-3.0, 3.0]));
        assert_eq!(x.relu().unwrap().value().to_f64_vec(), vec![0.0, 3.0]);
        let z = tape.constant(t(&[1], &[0.0]));
        assert_eq!(z.sigmoid().unwrap().item(), Some(0.5));
        let half = tape.constant(t(&[1], &[0.5]));
        // ln 0.5 = -0.693147180559945309417232121458...
        assert!((half.log().unwrap().item().unwrap() + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn log_rejects_non_positive() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(x.log(), Err(TensorError::Domain { .. })));
    }

    #[test]
    fn binary_shape_mismatch() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(a.add(b), Err(TensorError::ShapeMismatch { .. })));
        let s = tape.constant(t(&[1], &[10.0]));
        assert_eq!(a.mul(s).unwrap().value().to_f64_vec(), vec![10.0, 20.0]);
    }

    #[test]
    fn non_finite_outputs_are_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1], &[1000.0]));
        assert_eq!(x.exp().unwrap_err(), TensorError::NonFinite { op: "exp" });
    }

    #[test]
    fn conv_all_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 3, 3]));
        let k = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = x.conv2d(k, Some(b)).unwrap().value();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.at(&[0, 1, 1]), 9.0);
        assert_eq!(y.at(&[0, 0, 0]), 4.0);
        assert_eq!(y.at(&[0, 2, 2]), 4.0);
        assert_eq!(y.at(&[0, 0, 1]), 6.0);
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 4 * 5).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = tape.constant(t(&[2, 4, 5], &data));
        let mut k = vec![0.0; 2 * 2 * 9];
        k[4] = 1.0; // out 0 ← in 0 centre
        k[2 * 9 + 9 + 4] = 1.0; // out 1 ← in 1 centre
        let k = tape.constant(t(&[2, 2, 3, 3], &k));
        let y = x.conv2d(k, None).unwrap().value();
        assert_eq!(y.to_f64_vec(), data);
    }

    #[test]
    fn conv_rejects_even_kernel_and_channel_mismatch() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[2, 4, 4]));
        let even = tape.constant(Tensor::ones(&[1, 2, 2, 2]));
        assert!(matches!(x.conv2d(even, None), Err(TensorError::InvalidArgument { .. })));
        let wrong = tape.constant(Tensor::ones(&[1, 3, 3, 3]));
        assert!(matches!(x.conv2d(wrong, None), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn maxpool_window_and_constant() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2, 2], &[1., 2., 3., 4.]));
        assert_eq!(x.maxpool2().unwrap().value().to_f64_vec(), vec![4.0]);
        let c = tape.constant(Tensor::full(&[2, 4, 6], 0.7));
        let y = c.maxpool2().unwrap().value();
        assert_eq!(y.shape(), &[2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.7));
        let odd = tape.constant(Tensor::ones(&[1, 3, 4]));
        assert!(odd.maxpool2().is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 2, 2], 1.0));
        let y = x.maxpool2().unwrap().sum().unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().to_f64_vec(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn transposed_conv_cases() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 1], &[2.5]));
        let k = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = x.conv_transpose2(k, Some(b)).unwrap().value();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.to_f64_vec(), vec![2.5; 4]);

        let z = tape.constant(Tensor::zeros(&[3, 2, 3]));
        let k = tape.constant(Tensor::ones(&[3, 2, 2, 2]));
        let b = tape.constant(t(&[2], &[0.25, -1.0]));
        let y = z.conv_transpose2(k, Some(b)).unwrap().value();
        assert_eq!(y.shape(), &[2, 4, 6]);
        assert!(y.data()[..24].iter().all(|&v| v == 0.25));
        assert!(y.data()[24..].iter().all(|&v| v == -1.0));

        let k3 = tape.constant(Tensor::ones(&[3, 2, 3, 3]));
        assert!(z.conv_transpose2(k3, None).is_err());
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::<f64>::new();
        let even = tape.constant(t(&[2, 1, 1], &[0.0, 0.0]));
        assert_eq!(even.softmax_over_channels().unwrap().value().to_f64_vec(), vec![0.5, 0.5]);
        let one = tape.constant(t(&[2, 1, 1], &[1.0, 0.0]));
        let p = one.softmax_over_channels().unwrap().value().to_f64_vec();
        // e/(e+1) = 0.7310585786300049
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((p[1] - 0.268_941_421_369_995_1).abs() < 1e-15);
        let big = tape.constant(t(&[2, 1, 1], &[100.0, 0.0]));
        let p = big.softmax_over_channels().unwrap().value().to_f64_vec();
        assert!(p[0] >= 1.0 - 1e-15 && p[1] < 1e-40 && p[1] > 0.0);
    }

    #[test]
    fn narrow_concat_roundtrip() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let x = tape.constant(t(&[2, 3, 4], &data));
        let parts: Vec<_> = (0..3).map(|i| x.narrow(1, i, 1).unwrap()).collect();
        let back = crate::autograd::Var::concat(&parts, 1).unwrap();
        assert_eq!(back.value().to_f64_vec(), data);
    }
}
