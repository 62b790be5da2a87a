use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{Real, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation with a hand-written backward rule, for fused kernels such as
/// splat compositing.
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient contribution for each input, given the upstream gradient of
    /// the output. `None` means the input receives nothing.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>>;
}

enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    SqDiff(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    MatMul(Var, Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Exp(Var),
    Sqrt(Var),
    Softmax(Var, usize),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Transpose(Var),
    IndexSelect(Var, Vec<usize>),
    Take(Var, Vec<usize>),
    Sum {
        x: Var,
        axis: Option<usize>,
        scale: T,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Custom(Box<dyn CustomOp<T>>, Vec<Var>),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a computation.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss, retained for leaf nodes.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like the value; zeros when `v` did not
    /// influence the loss.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let shape = &self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::from_vec(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat output index, the flat index of the broadcast source.
fn broadcast_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut idx = 0usize;
    for _ in 0..total {
        map.push(idx);
        for d in (0..rank).rev() {
            counter[d] += 1;
            idx += strides[d];
            if counter[d] < out[d] {
                break;
            }
            idx -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    map
}

/// Split a shape around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < k || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let p = self.cols();
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            dst[oy * self.ow + ox] = if iy >= 0
                                && (iy as usize) < self.h
                                && ix >= 0
                                && (ix as usize) < self.w
                            {
                                x[(c * self.h + iy as usize) * self.w + ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Real>(&self, cols: &[T], gx: &mut [T]) {
        let p = self.cols();
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix as usize >= self.w {
                                continue;
                            }
                            gx[(c * self.h + iy as usize) * self.w + ix as usize] += src[oy * self.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Descending order by value, ties broken by smaller index.
fn desc_by_value<T: Real>(vals: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&i, &j| {
        vals[j]
            .partial_cmp(&vals[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf node; gradients are accumulated for it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copy of `v` that is cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::ShapeMismatch {
            op: name,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let data: Vec<T> = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_map(sa, &out_shape);
            let mb = broadcast_map(sb, &out_shape);
            ma.iter().zip(&mb).map(|(&i, &j)| f(va[i], vb[j])).collect()
        };
        let value = Tensor::from_vec(&out_shape, data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    /// Elementwise sum with broadcasting over leading/unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `(a - b)^2` elementwise.
    pub fn sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "sq_diff",
            a,
            b,
            |x, y| (x - y) * (x - y),
            Op::SqDiff(a, b),
        )
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let value = self.map_value(a, |x| x + s);
        self.push(value, Op::AddScalar(a), &[a])
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Var {
        let value = self.map_value(a, |x| x * s);
        self.push(value, Op::MulScalar(a, s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -T::one())
    }

    fn map_value(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let t = self.value(a);
        Tensor::from_vec(t.shape(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map_value(a, |x| if x > T::zero() { x } else { T::zero() });
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let value = self.map_value(a, |x| if x > T::zero() { x } else { x * slope });
        self.push(value, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map_value(a, |x| x.tanh());
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.map_value(a, |x| x.exp());
        self.push(value, Op::Exp(a), &[a])
    }

    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.map_value(a, |x| x.sqrt());
        self.push(value, Op::Sqrt(a), &[a])
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k,
            1,
            self.value(b).data(),
            n,
            1,
            T::zero(),
            &mut out,
            n,
            1,
        );
        let value = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(Error::InvalidShape {
                op,
                shape: self.shape(a).to_vec(),
                reason: "axis out of range",
            });
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", a, axis)?;
        let t = self.value(a);
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let x = t.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mut m = T::neg_infinity();
                for l in 0..len {
                    m = m.max(x[at(l)]);
                }
                let mut s = T::zero();
                for l in 0..len {
                    let e = (x[at(l)] - m).exp();
                    y[at(l)] = e;
                    s += e;
                }
                for l in 0..len {
                    y[at(l)] /= s;
                }
            }
        }
        let value = Tensor::from_vec(t.shape(), y)?;
        Ok(self.push(value, Op::Softmax(a, axis), &[a]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(Error::InvalidShape {
            op: "concat",
            shape: Vec::new(),
            reason: "no inputs",
        })?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::from_vec(&out_shape, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), parts))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                shape: s.to_vec(),
                reason: "expected rank 2",
            });
        }
        let (m, n) = (s[0], s[1]);
        let x = self.value(a).data();
        let mut y = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                y[j * m + i] = x[i * n + j];
            }
        }
        let value = Tensor::from_vec(&[n, m], y)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    /// Select rows along axis 0.
    pub fn index_select(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() {
            return Err(Error::InvalidShape {
                op: "index_select",
                shape: s,
                reason: "scalar has no rows",
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= s[0]) {
            return Err(Error::ShapeMismatch {
                op: "index_select",
                lhs: s,
                rhs: vec![bad],
            });
        }
        let row = numel(&s[1..]);
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * row);
        for &r in rows {
            data.extend_from_slice(&x[r * row..(r + 1) * row]);
        }
        let mut out_shape = s;
        out_shape[0] = rows.len();
        let value = Tensor::from_vec(&out_shape, data)?;
        Ok(self.push(value, Op::IndexSelect(a, rows.to_vec()), &[a]))
    }

    /// Flat gather: `out[i] = a.flat[indices[i]]`, reshaped to `shape`.
    pub fn take(&mut self, a: Var, indices: &[usize], shape: &[usize]) -> Result<Var> {
        let n = self.value(a).len();
        if numel(shape) != indices.len() {
            return Err(Error::InvalidShape {
                op: "take",
                shape: shape.to_vec(),
                reason: "shape does not match index count",
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::ShapeMismatch {
                op: "take",
                lhs: self.shape(a).to_vec(),
                rhs: vec![bad],
            });
        }
        let x = self.value(a).data();
        let data = indices.iter().map(|&i| x[i]).collect();
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push(value, Op::Take(a, indices.to_vec()), &[a]))
    }

    fn sum_impl(&mut self, a: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let t = self.value(a);
        match axis {
            None => {
                let n = t.len();
                let scale = if mean {
                    T::one() / T::from_f64(n as f64)
                } else {
                    T::one()
                };
                let s: T = t.data().iter().copied().sum::<T>() * scale;
                Ok(self.push(Tensor::scalar(s), Op::Sum { x: a, axis, scale }, &[a]))
            }
            Some(ax) => {
                self.check_axis("sum", a, ax)?;
                let t = self.value(a);
                let (outer, len, inner) = split_axis(t.shape(), ax);
                let scale = if mean {
                    T::one() / T::from_f64(len as f64)
                } else {
                    T::one()
                };
                let x = t.data();
                let mut out = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *dst += v;
                        }
                    }
                }
                for v in &mut out {
                    *v *= scale;
                }
                let mut shape = t.shape().to_vec();
                shape.remove(ax);
                let value = Tensor::from_vec(&shape, out)?;
                Ok(self.push(value, Op::Sum { x: a, axis, scale }, &[a]))
            }
        }
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        self.sum_impl(a, None, false).expect("sum over all axes")
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        self.sum_impl(a, None, true).expect("mean over all axes")
    }

    /// Sum along `axis`, which is removed from the shape.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.sum_impl(a, Some(axis), false)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.sum_impl(a, Some(axis), true)
    }

    fn arg_reduce(&mut self, a: Var, axis: usize, take_max: bool) -> Result<Var> {
        self.check_axis(if take_max { "max" } else { "min" }, a, axis)?;
        let t = self.value(a);
        let (outer, len, inner) = split_axis(t.shape(), axis);
        if len == 0 {
            return Err(Error::InvalidShape {
                op: "max/min",
                shape: t.shape().to_vec(),
                reason: "empty reduction axis",
            });
        }
        let x = t.data();
        let mut idx = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for l in 1..len {
                    let j = (o * len + l) * inner + i;
                    let better = if take_max { x[j] > x[best] } else { x[j] < x[best] };
                    if better {
                        best = j;
                    }
                }
                idx.push(best);
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        self.take(a, &idx, &shape)
    }

    /// Maximum along `axis`; ties resolve to the smaller index.
    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.arg_reduce(a, axis, true)
    }

    pub fn min(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.arg_reduce(a, axis, false)
    }

    /// Largest `k` entries along the last axis, in descending order (ties by
    /// smaller index). Values are differentiable; the returned lane-local
    /// indices are constants.
    pub fn topk(&mut self, a: Var, k: usize) -> Result<(Var, Vec<usize>)> {
        let shape = self.shape(a).to_vec();
        let len = *shape.last().ok_or(Error::InvalidShape {
            op: "topk",
            shape: shape.clone(),
            reason: "scalar input",
        })?;
        if k > len {
            return Err(Error::TooManyNeighbors { k, available: len });
        }
        let lanes = numel(&shape) / len.max(1);
        let x = self.value(a).data();
        let mut local = Vec::with_capacity(lanes * k);
        let mut flat = Vec::with_capacity(lanes * k);
        let mut order: Vec<usize> = Vec::with_capacity(len);
        for lane in 0..lanes {
            let vals = &x[lane * len..(lane + 1) * len];
            order.clear();
            order.extend(0..len);
            let cmp = desc_by_value(vals);
            if k < len {
                order.select_nth_unstable_by(k, &cmp);
            }
            order[..k].sort_unstable_by(&cmp);
            for &j in &order[..k] {
                local.push(j);
                flat.push(lane * len + j);
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = k;
        let v = self.take(a, &flat, &out_shape)?;
        Ok((v, local))
    }

    /// 2-D convolution: `x [B, C, H, W]`, `w [O, C, KH, KW]`, `b [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: sw,
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let (oh, ow) = match (
            conv_out(sx[2], sw[2], stride, pad),
            conv_out(sx[3], sw[3], stride, pad),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: sx,
                    rhs: sw,
                })
            }
        };
        let geom = ConvGeom {
            c: sx[1],
            h: sx[2],
            w: sx[3],
            kh: sw[2],
            kw: sw[3],
            oh,
            ow,
            stride,
            pad,
        };
        let (batch, o) = (sx[0], sw[0]);
        let (rows, p) = (geom.rows(), geom.cols());
        let in_len = geom.c * geom.h * geom.w;
        let mut cols = vec![T::zero(); rows * p];
        let mut out = vec![T::zero(); batch * o * p];
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        for bi in 0..batch {
            geom.im2col(&xd[bi * in_len..(bi + 1) * in_len], &mut cols);
            let dst = &mut out[bi * o * p..(bi + 1) * o * p];
            if let Some(b) = b {
                let bd = self.value(b).data();
                for (oc, chunk) in dst.chunks_mut(p).enumerate() {
                    chunk.fill(bd[oc]);
                }
            }
            T::gemm(o, rows, p, T::one(), wd, rows, 1, &cols, p, 1, T::one(), dst, p, 1);
        }
        let value = Tensor::from_vec(&[batch, o, oh, ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            &inputs,
        ))
    }

    /// Record an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[Var], value: Tensor<T>) -> Var {
        self.push(value, Op::Custom(op, inputs.to_vec()), inputs)
    }

    /// Allow a second backward pass on this tape.
    pub fn reset_backward(&mut self) {
        self.backward_done = false;
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::DetachedGraph);
        }
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        self.backward_done = true;

        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].take() else { continue };
            self.propagate(node, &g, lo);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let shape = |v: Var| nodes[v.0].value.shape();
        // Gradient buffer for `v`, or None when `v` needs no gradient.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].requires_grad {
                    let len = nodes[v.0].value.len();
                    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]).as_mut_slice())
                } else {
                    None
                }
            }};
        }
        let out_shape = node.value.shape();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                for (v, s) in [(*a, T::one()), (*b, sign)] {
                    if let Some(gv) = acc!(v) {
                        if shape(v) == out_shape {
                            for (d, &gi) in gv.iter_mut().zip(g) {
                                *d += gi * s;
                            }
                        } else {
                            for (k, &src) in broadcast_map(shape(v), out_shape).iter().enumerate() {
                                gv[src] += g[k] * s;
                            }
                        }
                    }
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) | Op::SqDiff(a, b) => {
                let (a, b) = (*a, *b);
                let same = shape(a) == out_shape && shape(b) == out_shape;
                let (ma, mb) = if same {
                    (Vec::new(), Vec::new())
                } else {
                    (
                        broadcast_map(shape(a), out_shape),
                        broadcast_map(shape(b), out_shape),
                    )
                };
                let ia = |k: usize| if same { k } else { ma[k] };
                let ib = |k: usize| if same { k } else { mb[k] };
                let (va, vb) = (val(a), val(b));
                let two = T::one() + T::one();
                // d(out)/d(a), d(out)/d(b) at element k
                let da = |k: usize| match node.op {
                    Op::Mul(..) => vb[ib(k)],
                    Op::Div(..) => T::one() / vb[ib(k)],
                    _ => two * (va[ia(k)] - vb[ib(k)]),
                };
                let db = |k: usize| match node.op {
                    Op::Mul(..) => va[ia(k)],
                    Op::Div(..) => -y[k] / vb[ib(k)],
                    _ => -two * (va[ia(k)] - vb[ib(k)]),
                };
                if let Some(ga) = acc!(a) {
                    for k in 0..g.len() {
                        ga[ia(k)] += g[k] * da(k);
                    }
                }
                if let Some(gb) = acc!(b) {
                    for k in 0..g.len() {
                        gb[ib(k)] += g[k] * db(k);
                    }
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = acc!(*a) {
                    for (d, &gi) in ga.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            Op::MulScalar(a, s) => {
                if let Some(ga) = acc!(*a) {
                    for (d, &gi) in ga.iter_mut().zip(g) {
                        *d += gi * *s;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (shape(a)[0], shape(a)[1]);
                let n = shape(b)[1];
                let (va, vb) = (val(a), val(b));
                if let Some(ga) = acc!(a) {
                    // dA = G B^T
                    T::gemm(m, n, k, T::one(), g, n, 1, vb, 1, n, T::one(), ga, k, 1);
                }
                if let Some(gb) = acc!(b) {
                    // dB = A^T G
                    T::gemm(k, m, n, T::one(), va, 1, k, g, n, 1, T::one(), gb, n, 1);
                }
            }
            Op::Relu(a) | Op::LeakyRelu(a, _) => {
                let slope = match node.op {
                    Op::LeakyRelu(_, s) => s,
                    _ => T::zero(),
                };
                let x = val(*a);
                if let Some(ga) = acc!(*a) {
                    for k in 0..g.len() {
                        ga[k] += if x[k] > T::zero() { g[k] } else { g[k] * slope };
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = acc!(*a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * (T::one() - y[k] * y[k]);
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = acc!(*a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k];
                    }
                }
            }
            Op::Sqrt(a) => {
                let half = T::from_f64(0.5);
                if let Some(ga) = acc!(*a) {
                    for k in 0..g.len() {
                        if y[k] > T::zero() {
                            ga[k] += g[k] * half / y[k];
                        }
                    }
                }
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = split_axis(out_shape, *axis);
                if let Some(ga) = acc!(*a) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let s: T = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                            for l in 0..len {
                                ga[at(l)] += y[at(l)] * (g[at(l)] - s);
                            }
                        }
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let outer = numel(&out_shape[..*axis]);
                let inner = numel(&out_shape[axis + 1..]);
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let len = shape(p)[*axis] * inner;
                    if let Some(gp) = acc!(p) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + len];
                            for (d, &s) in gp[o * len..(o + 1) * len].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = acc!(*a) {
                    for (d, &gi) in ga.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (shape(*a)[0], shape(*a)[1]);
                if let Some(ga) = acc!(*a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::IndexSelect(a, rows) => {
                let row = numel(&shape(*a)[1..]);
                if let Some(ga) = acc!(*a) {
                    for (r, &src) in rows.iter().enumerate() {
                        for c in 0..row {
                            ga[src * row + c] += g[r * row + c];
                        }
                    }
                }
            }
            Op::Take(a, idx) => {
                if let Some(ga) = acc!(*a) {
                    for (k, &src) in idx.iter().enumerate() {
                        ga[src] += g[k];
                    }
                }
            }
            Op::Sum { x, axis, scale } => {
                let xs = shape(*x).to_vec();
                if let Some(gx) = acc!(*x) {
                    match axis {
                        None => {
                            let v = g[0] * *scale;
                            for d in gx.iter_mut() {
                                *d += v;
                            }
                        }
                        Some(ax) => {
                            let (outer, len, inner) = split_axis(&xs, *ax);
                            for o in 0..outer {
                                for l in 0..len {
                                    for i in 0..inner {
                                        gx[(o * len + l) * inner + i] += g[o * inner + i] * *scale;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let sx = shape(*x);
                let sw = shape(*w);
                let geom = ConvGeom {
                    c: sx[1],
                    h: sx[2],
                    w: sx[3],
                    kh: sw[2],
                    kw: sw[3],
                    oh: out_shape[2],
                    ow: out_shape[3],
                    stride: *stride,
                    pad: *pad,
                };
                let (batch, o) = (sx[0], sw[0]);
                let (rows, p) = (geom.rows(), geom.cols());
                let in_len = geom.c * geom.h * geom.w;
                if let Some(b) = b {
                    if let Some(gb) = acc!(*b) {
                        for bi in 0..batch {
                            for oc in 0..o {
                                let s: T = g[(bi * o + oc) * p..(bi * o + oc + 1) * p].iter().copied().sum();
                                gb[oc] += s;
                            }
                        }
                    }
                }
                let xd = val(*x);
                let wd = val(*w);
                let mut cols = vec![T::zero(); rows * p];
                if nodes[w.0].requires_grad {
                    let mut gw_local = vec![T::zero(); o * rows];
                    for bi in 0..batch {
                        geom.im2col(&xd[bi * in_len..(bi + 1) * in_len], &mut cols);
                        let gb = &g[bi * o * p..(bi + 1) * o * p];
                        // dW += G_b cols^T
                        T::gemm(o, p, rows, T::one(), gb, p, 1, &cols, 1, p, T::one(), &mut gw_local, rows, 1);
                    }
                    if let Some(gw) = acc!(*w) {
                        for (d, s) in gw.iter_mut().zip(gw_local) {
                            *d += s;
                        }
                    }
                }
                if let Some(gx) = acc!(*x) {
                    for bi in 0..batch {
                        let gb = &g[bi * o * p..(bi + 1) * o * p];
                        // dcols = W^T G_b
                        T::gemm(rows, o, p, T::one(), wd, 1, rows, gb, p, 1, T::zero(), &mut cols, p, 1);
                        geom.col2im_add(&cols, &mut gx[bi * in_len..(bi + 1) * in_len]);
                    }
                }
            }
            Op::Custom(op, inputs) => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| &nodes[v.0].value).collect();
                let contributions = op.backward(&ins, &node.value, g);
                for (&v, c) in inputs.iter().zip(contributions) {
                    if let (Some(c), Some(gv)) = (c, acc!(v)) {
                        for (d, s) in gv.iter_mut().zip(c) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}
