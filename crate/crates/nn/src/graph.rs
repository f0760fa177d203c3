//! The tape: every op appends a node holding its output, and `backward` walks
//! the nodes in reverse accumulating gradients for everything that needs one.

use crate::kernels::{self, GroupStats};
use crate::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Neg,
    Exp,
    Abs,
    Square,
    Silu,
    Relu,
    Scale(f64),
    AddScalar(f64),
    Pow(f64),
    Softplus(f64),
    Clamp(f64, f64),
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Unary(Var, Unary),
    Binary(Var, Var, Binary),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, stats: GroupStats<T> },
    AvgPool2(Var),
    Upsample(Var, usize),
    Filter1d { x: Var, kernel: Vec<T>, along_width: bool },
    Concat(Vec<Var>),
    SliceChannels { x: Var, start: usize },
    BroadcastSpatial { z: Var },
    MeanSpatial(Var),
    ChannelAffine { x: Var, scale: Vec<T> },
    Sum(Var),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode autodiff tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// `ln(1 + e^(x + shift))`, switching to the identity once the exponential term is negligible.
pub fn softplus<T: Real>(x: T, shift: T) -> T {
    let t = x + shift;
    if t > T::of(30.0) {
        t
    } else {
        t.exp().ln_1p()
    }
}

impl Unary {
    fn forward<T: Real>(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Silu => x * x.sigmoid(),
            Unary::Relu => x.max(T::zero()),
            Unary::Scale(s) => x * T::of(s),
            Unary::AddScalar(s) => x + T::of(s),
            Unary::Pow(p) => x.powf(T::of(p)),
            Unary::Softplus(c) => softplus(x, T::of(c)),
            Unary::Clamp(lo, hi) => x.max(T::of(lo)).min(T::of(hi)),
        }
    }

    /// Local derivative given input `x` and output `y`.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        let (zero, one) = (T::zero(), T::one());
        match self {
            Unary::Neg => -one,
            Unary::Exp => y,
            Unary::Abs => {
                if x > zero {
                    one
                } else if x < zero {
                    -one
                } else {
                    zero
                }
            }
            Unary::Square => x + x,
            Unary::Silu => {
                let s = x.sigmoid();
                s * (one + x * (one - s))
            }
            Unary::Relu => {
                if x > zero {
                    one
                } else {
                    zero
                }
            }
            Unary::Scale(s) => T::of(s),
            Unary::AddScalar(_) => one,
            // Zero at the origin so relu-then-pow chains stay finite for p < 1.
            Unary::Pow(p) if x == zero && p != 1.0 => zero,
            Unary::Pow(p) => T::of(p) * x.powf(T::of(p - 1.0)),
            Unary::Softplus(c) => (x + T::of(c)).sigmoid(),
            Unary::Clamp(lo, hi) => {
                if x >= T::of(lo) && x <= T::of(hi) {
                    one
                } else {
                    zero
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item().f64()
    }

    fn unary(&mut self, x: Var, op: Unary) -> Var {
        let value = match op {
            Unary::Silu => self.value(x).map(|v| v * v.sigmoid()),
            _ => self.value(x).map(|v| op.forward(v)),
        };
        let rg = self.rg(x);
        self.push(value, Op::Unary(x, op), rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Neg)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Silu)
    }
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }
    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Unary::Scale(s))
    }
    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Unary::AddScalar(s))
    }
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(x, Unary::Pow(p))
    }
    /// `ln(1 + e^(x + shift))`.
    pub fn softplus(&mut self, x: Var, shift: f64) -> Var {
        self.unary(x, Unary::Softplus(shift))
    }
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Unary::Clamp(lo, hi))
    }

    fn binary(&mut self, a: Var, b: Var, op: Binary) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "binary op {op:?} shape mismatch");
        let value = match op {
            Binary::Add => va.zip_map(vb, |x, y| x + y),
            Binary::Sub => va.zip_map(vb, |x, y| x - y),
            Binary::Mul => va.zip_map(vb, |x, y| x * y),
            Binary::Div => va.zip_map(vb, |x, y| x / y),
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Binary(a, b, op), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Add)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Sub)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Mul)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Div)
    }

    /// 2-D cross-correlation, weight `[out, in, k, k]`, optional bias `[out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let value = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(value, Op::Conv2d { x, w, b, stride, pad }, rg)
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Var {
        let (value, stats) =
            kernels::group_norm_forward(self.value(x), self.value(gamma), self.value(beta), groups, eps);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(value, Op::GroupNorm { x, gamma, beta, groups, stats }, rg)
    }

    /// 2x2 mean pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let value = kernels::avg_pool2_forward(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::AvgPool2(x), rg)
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Var {
        let value = kernels::upsample_nearest_forward(self.value(x), factor);
        let rg = self.rg(x);
        self.push(value, Op::Upsample(x, factor), rg)
    }

    /// Valid depthwise 1-D filter along the width (`along_width`) or height axis.
    pub fn filter1d(&mut self, x: Var, kernel: &[f64], along_width: bool) -> Var {
        let kernel: Vec<T> = kernel.iter().map(|&k| T::of(k)).collect();
        let value = kernels::filter1d_forward(self.value(x), &kernel, along_width);
        let rg = self.rg(x);
        self.push(value, Op::Filter1d { x, kernel, along_width }, rg)
    }

    /// Concatenate 4-D tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        let (b, _, h, w) = self.value(xs[0]).dims4();
        let total: usize = xs.iter().map(|&x| self.value(x).dims4().1).sum();
        let mut data = Vec::with_capacity(b * total * h * w);
        for n in 0..b {
            for &x in xs {
                let v = self.value(x);
                let (vb, c, vh, vw) = v.dims4();
                assert!(vb == b && vh == h && vw == w, "concat shape mismatch");
                data.extend_from_slice(&v.data()[n * c * h * w..(n + 1) * c * h * w]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        self.push(Tensor::new(&[b, total, h, w], data), Op::Concat(xs.to_vec()), rg)
    }

    /// Channels `start..start + len` of a 4-D tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x);
        let (b, c, h, w) = v.dims4();
        assert!(start + len <= c, "channel slice out of range");
        let hw = h * w;
        let mut data = Vec::with_capacity(b * len * hw);
        for n in 0..b {
            data.extend_from_slice(&v.data()[(n * c + start) * hw..(n * c + start + len) * hw]);
        }
        let rg = self.rg(x);
        self.push(Tensor::new(&[b, len, h, w], data), Op::SliceChannels { x, start }, rg)
    }

    /// `[B, L]` to `[B, L, h, w]` by repeating each entry over the plane.
    pub fn broadcast_spatial(&mut self, z: Var, h: usize, w: usize) -> Var {
        let (b, l) = self.value(z).dims2();
        let mut data = Vec::with_capacity(b * l * h * w);
        for &v in self.value(z).data() {
            data.extend(std::iter::repeat_n(v, h * w));
        }
        let rg = self.rg(z);
        self.push(Tensor::new(&[b, l, h, w], data), Op::BroadcastSpatial { z }, rg)
    }

    /// `[B, C, H, W]` to `[B, C]` by averaging each plane.
    pub fn mean_spatial(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (b, c, h, w) = v.dims4();
        let inv = T::of(1.0 / (h * w) as f64);
        let data = v.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let rg = self.rg(x);
        self.push(Tensor::new(&[b, c], data), Op::MeanSpatial(x), rg)
    }

    /// `x * scale[c] + shift[c]` with constant per-channel coefficients; axis 1 is the channel.
    pub fn channel_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Var {
        let v = self.value(x);
        let c = v.shape()[1];
        assert!(scale.len() == c && shift.len() == c, "channel_affine expects {c} coefficients");
        let inner: usize = v.shape()[2..].iter().product();
        let mut out = v.clone();
        for (i, val) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / inner) % c;
            *val = *val * T::of(scale[ch]) + T::of(shift[ch]);
        }
        let rg = self.rg(x);
        let scale = scale.iter().map(|&s| T::of(s)).collect();
        self.push(out, Op::ChannelAffine { x, scale }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v.f64()).sum::<f64>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(T::of(s)), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshape(shape);
        let rg = self.rg(x);
        self.push(value, Op::Reshape(x), rg)
    }

    /// Gradients of the scalar `loss` w.r.t. every node that requires one.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (parent, pg) in self.local_grads(node, &g) {
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Unary(x, op) => {
                let xv = self.value(*x);
                let mut d = g.clone();
                let one = T::one();
                match op {
                    Unary::Silu => {
                        for (dv, &xi) in d.data_mut().iter_mut().zip(xv.data()) {
                            let s = xi.sigmoid();
                            *dv = *dv * s * (one + xi * (one - s));
                        }
                    }
                    _ => {
                        for ((dv, &xi), &yi) in d.data_mut().iter_mut().zip(xv.data()).zip(node.value.data()) {
                            *dv = *dv * op.derivative(xi, yi);
                        }
                    }
                }
                out.push((*x, d));
            }
            Op::Binary(a, b, op) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = match op {
                    Binary::Add | Binary::Sub => g.clone(),
                    Binary::Mul => g.zip_map(vb, |d, y| d * y),
                    Binary::Div => g.zip_map(vb, |d, y| d / y),
                };
                if self.rg(*a) {
                    out.push((*a, ga));
                }
                if self.rg(*b) {
                    let gb = match op {
                        Binary::Add => g.clone(),
                        Binary::Sub => g.map(|d| -d),
                        Binary::Mul => g.zip_map(va, |d, x| d * x),
                        Binary::Div => {
                            let q = va.zip_map(vb, |x, y| x / (y * y));
                            g.zip_map(&q, |d, q| -d * q)
                        }
                    };
                    out.push((*b, gb));
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let need_db = b.is_some_and(|b| self.rg(b));
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    self.rg(*x),
                    self.rg(*w),
                    need_db,
                );
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if let Some(dw) = dw {
                    out.push((*w, dw));
                }
                if let (Some(b), Some(db)) = (b, db) {
                    out.push((*b, db));
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, stats } => {
                let (dx, dgamma, dbeta) =
                    kernels::group_norm_backward(self.value(*x), self.value(*gamma), stats, *groups, g);
                for (v, d) in [(*x, dx), (*gamma, dgamma), (*beta, dbeta)] {
                    if self.rg(v) {
                        out.push((v, d));
                    }
                }
            }
            Op::AvgPool2(x) => out.push((*x, kernels::avg_pool2_backward(g))),
            Op::Upsample(x, f) => out.push((*x, kernels::upsample_nearest_backward(g, *f))),
            Op::Filter1d { x, kernel, along_width } => {
                out.push((*x, kernels::filter1d_backward(g, kernel, *along_width, self.shape(*x))))
            }
            Op::Concat(xs) => {
                let (b, total, h, w) = g.dims4();
                let hw = h * w;
                let mut offset = 0;
                for &x in xs {
                    let c = self.value(x).dims4().1;
                    if self.rg(x) {
                        let mut data = Vec::with_capacity(b * c * hw);
                        for n in 0..b {
                            let base = (n * total + offset) * hw;
                            data.extend_from_slice(&g.data()[base..base + c * hw]);
                        }
                        out.push((x, Tensor::new(&[b, c, h, w], data)));
                    }
                    offset += c;
                }
            }
            Op::SliceChannels { x, start } => {
                let (b, c, h, w) = self.value(*x).dims4();
                let len = g.dims4().1;
                let hw = h * w;
                let mut d = Tensor::zeros(&[b, c, h, w]);
                for n in 0..b {
                    let dst = (n * c + start) * hw;
                    d.data_mut()[dst..dst + len * hw].copy_from_slice(&g.data()[n * len * hw..(n + 1) * len * hw]);
                }
                out.push((*x, d));
            }
            Op::BroadcastSpatial { z } => {
                let (b, l) = self.value(*z).dims2();
                let (_, _, h, w) = g.dims4();
                let data = g.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>()).collect();
                out.push((*z, Tensor::new(&[b, l], data)));
            }
            Op::MeanSpatial(x) => {
                let (b, c, h, w) = self.value(*x).dims4();
                let inv = T::of(1.0 / (h * w) as f64);
                let mut data = Vec::with_capacity(b * c * h * w);
                for &d in g.data() {
                    data.extend(std::iter::repeat_n(d * inv, h * w));
                }
                out.push((*x, Tensor::new(&[b, c, h, w], data)));
            }
            Op::ChannelAffine { x, scale } => {
                let shape = self.shape(*x);
                let c = shape[1];
                let inner: usize = shape[2..].iter().product();
                let mut d = g.clone();
                for (i, v) in d.data_mut().iter_mut().enumerate() {
                    *v = *v * scale[(i / inner) % c];
                }
                out.push((*x, d));
            }
            Op::Sum(x) => {
                out.push((*x, Tensor::full(self.shape(*x), g.item())));
            }
            Op::Reshape(x) => out.push((*x, g.clone().reshape(self.shape(*x)))),
        }
        out
    }
}
