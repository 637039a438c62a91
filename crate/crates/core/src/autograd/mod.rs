//! Minimal reverse-mode automatic differentiation for NCHW image models.
//!
//! A [`Graph`] records operations on [`Var`]s; [`Graph::backward`] walks the
//! recorded nodes in reverse creation order. Nodes own their parents through
//! `Rc`, so an inference graph (`record = false`) frees intermediates as soon
//! as they go out of scope. A shape-only graph skips all arithmetic and is
//! used for static complexity counts.
//!
//! Shape errors inside operations are programming errors and panic; model
//! entry points validate user input first.

pub mod conv;
mod scalar;
mod tensor;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::marker::PhantomData;
use std::rc::Rc;

pub use conv::ConvSpec;
pub use scalar::Scalar;
pub use tensor::Tensor;

use crate::image::upsample_taps;

enum Op<T: Scalar> {
    Leaf,
    Conv {
        x: Var<T>,
        w: Var<T>,
        b: Option<Var<T>>,
        spec: ConvSpec,
    },
    Add(Var<T>, Var<T>),
    Sub(Var<T>, Var<T>),
    Mul(Var<T>, Var<T>),
    /// `x [N,C,H,W] ∘ w [N,1,H,W]`
    MulChannels(Var<T>, Var<T>),
    Scale(Var<T>, T),
    AddScalar(Var<T>),
    Concat(Vec<Var<T>>),
    Narrow(Var<T>, usize),
    Sigmoid(Var<T>),
    Softplus(Var<T>),
    LeakyRelu(Var<T>, T),
    PixelShuffle(Var<T>, usize),
    SpaceToDepth(Var<T>, usize),
    Upsample2(Var<T>),
    AvgPool2(Var<T>),
    SoftmaxChannels(Var<T>),
    Powf(Var<T>, T),
    Ln(Var<T>),
    Abs(Var<T>),
    Sum(Var<T>),
}

struct Node<T: Scalar> {
    id: usize,
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Handle to a value in a [`Graph`].
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(self.0.clone())
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.0.id, self.0.value.shape())
    }
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// The single element of a scalar value.
    pub fn item(&self) -> T {
        self.0.value.data()[0]
    }
}

/// Gradients of the leaves that required them, keyed by node id.
pub struct Gradients<T> {
    map: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.map.get(&v.id())
    }

    pub fn take(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        self.map.remove(&v.id())
    }
}

pub struct Graph<T: Scalar> {
    next_id: Cell<usize>,
    record: bool,
    shape_only: bool,
    madds: Cell<u64>,
    _marker: PhantomData<T>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    /// A graph that records operations for backpropagation.
    pub fn new() -> Self {
        Graph {
            next_id: Cell::new(0),
            record: true,
            shape_only: false,
            madds: Cell::new(0),
            _marker: PhantomData,
        }
    }

    /// Forward-only graph; nothing is retained for backward.
    pub fn inference() -> Self {
        Graph {
            record: false,
            ..Self::new()
        }
    }

    /// Propagates shapes only; values are phantoms.
    pub fn shape_only() -> Self {
        Graph {
            record: false,
            shape_only: true,
            ..Self::new()
        }
    }

    pub fn is_shape_only(&self) -> bool {
        self.shape_only
    }

    /// Multiply-accumulates executed (or counted) by convolutions so far.
    pub fn madds(&self) -> u64 {
        self.madds.get()
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, parents_grad: bool) -> Var<T> {
        let id = self.next_id.get();
        self.next_id.set(id + 1);
        let requires_grad = self.record && parents_grad;
        Var(Rc::new(Node {
            id,
            value,
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
        }))
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<T> {
        let value = if self.shape_only {
            Tensor::phantom(value.shape().to_vec())
        } else {
            value
        };
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf (gradient tracked when recording).
    pub fn param(&self, value: Tensor<T>) -> Var<T> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.leaf(value, false)
    }

    pub fn full(&self, shape: &[usize], v: f64) -> Var<T> {
        if self.shape_only {
            return self.push(Tensor::phantom(shape.to_vec()), Op::Leaf, false);
        }
        self.constant(Tensor::full(shape.to_vec(), T::of(v)))
    }

    fn unary(&self, x: &Var<T>, shape: Vec<usize>, f: impl FnOnce() -> Tensor<T>, op: Op<T>) -> Var<T> {
        let value = if self.shape_only {
            Tensor::phantom(shape)
        } else {
            f()
        };
        self.push(value, op, x.requires_grad())
    }

    fn binary_check(a: &Var<T>, b: &Var<T>, what: &str) {
        assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
    }

    pub fn conv2d(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, spec: ConvSpec) -> Var<T> {
        let shape = conv::output_shape(x.shape(), w.shape(), spec);
        assert_eq!(x.shape()[1], w.shape()[1], "conv channel mismatch: {:?} vs {:?}", x.shape(), w.shape());
        self.madds.set(self.madds.get() + conv::madds(x.shape(), w.shape(), spec));
        let value = if self.shape_only {
            Tensor::phantom(shape)
        } else {
            conv::forward(x.value(), w.value(), b.map(|b| b.value()), spec)
        };
        let rg = x.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        self.push(
            value,
            Op::Conv {
                x: x.clone(),
                w: w.clone(),
                b: b.cloned(),
                spec,
            },
            rg,
        )
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Var<T> {
        Self::binary_check(a, b, "add");
        let v = if self.shape_only {
            Tensor::phantom(a.shape().to_vec())
        } else {
            a.value().zip_map(b.value(), |p, q| p + q)
        };
        self.push(v, Op::Add(a.clone(), b.clone()), a.requires_grad() || b.requires_grad())
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Var<T> {
        Self::binary_check(a, b, "sub");
        let v = if self.shape_only {
            Tensor::phantom(a.shape().to_vec())
        } else {
            a.value().zip_map(b.value(), |p, q| p - q)
        };
        self.push(v, Op::Sub(a.clone(), b.clone()), a.requires_grad() || b.requires_grad())
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Var<T> {
        Self::binary_check(a, b, "mul");
        let v = if self.shape_only {
            Tensor::phantom(a.shape().to_vec())
        } else {
            a.value().zip_map(b.value(), |p, q| p * q)
        };
        self.push(v, Op::Mul(a.clone(), b.clone()), a.requires_grad() || b.requires_grad())
    }

    /// Broadcasts a one-channel map `w [N,1,H,W]` over the channels of `x`.
    pub fn mul_channels(&self, x: &Var<T>, w: &Var<T>) -> Var<T> {
        let (n, c, h, wd) = dims(x.shape());
        assert_eq!(w.shape(), [n, 1, h, wd], "mul_channels: weight map shape");
        let v = if self.shape_only {
            Tensor::phantom(x.shape().to_vec())
        } else {
            let (xd, wm) = (x.value().data(), w.value().data());
            let plane = h * wd;
            let mut out = vec![T::zero(); xd.len()];
            for s in 0..n {
                let m = &wm[s * plane..(s + 1) * plane];
                for ch in 0..c {
                    let base = (s * c + ch) * plane;
                    for i in 0..plane {
                        out[base + i] = xd[base + i] * m[i];
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), out).unwrap()
        };
        self.push(v, Op::MulChannels(x.clone(), w.clone()), x.requires_grad() || w.requires_grad())
    }

    pub fn scale(&self, x: &Var<T>, s: f64) -> Var<T> {
        let s = T::of(s);
        self.unary(x, x.shape().to_vec(), || x.value().map(|v| v * s), Op::Scale(x.clone(), s))
    }

    pub fn add_scalar(&self, x: &Var<T>, s: f64) -> Var<T> {
        let s = T::of(s);
        self.unary(x, x.shape().to_vec(), || x.value().map(|v| v + s), Op::AddScalar(x.clone()))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&self, parts: &[&Var<T>]) -> Var<T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let (n, _, h, w) = dims(parts[0].shape());
        for p in parts {
            let (pn, _, ph, pw) = dims(p.shape());
            assert_eq!((pn, ph, pw), (n, h, w), "concat: incompatible {:?}", p.shape());
        }
        let c_total: usize = parts.iter().map(|p| p.shape()[1]).sum();
        let shape = vec![n, c_total, h, w];
        let v = if self.shape_only {
            Tensor::phantom(shape)
        } else {
            let plane = h * w;
            let mut out = Vec::with_capacity(n * c_total * plane);
            for s in 0..n {
                for p in parts {
                    let c = p.shape()[1];
                    out.extend_from_slice(&p.value().data()[s * c * plane..(s + 1) * c * plane]);
                }
            }
            Tensor::new(shape, out).unwrap()
        };
        let rg = parts.iter().any(|p| p.requires_grad());
        self.push(v, Op::Concat(parts.iter().map(|&p| p.clone()).collect()), rg)
    }

    /// Channels `start .. start + len`.
    pub fn narrow(&self, x: &Var<T>, start: usize, len: usize) -> Var<T> {
        let (n, c, h, w) = dims(x.shape());
        assert!(start + len <= c, "narrow {start}+{len} beyond {c} channels");
        let shape = vec![n, len, h, w];
        let compute = || {
            let plane = h * w;
            let xd = x.value().data();
            let mut out = Vec::with_capacity(n * len * plane);
            for s in 0..n {
                out.extend_from_slice(&xd[(s * c + start) * plane..(s * c + start + len) * plane]);
            }
            Tensor::new(vec![n, len, h, w], out).unwrap()
        };
        self.unary(x, shape, compute, Op::Narrow(x.clone(), start))
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Var<T> {
        self.unary(x, x.shape().to_vec(), || x.value().map(sigmoid_scalar), Op::Sigmoid(x.clone()))
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&self, x: &Var<T>) -> Var<T> {
        let f = |v: T| v.max(T::zero()) + (-v.abs()).exp().ln_1p();
        self.unary(x, x.shape().to_vec(), || x.value().map(f), Op::Softplus(x.clone()))
    }

    pub fn leaky_relu(&self, x: &Var<T>, slope: f64) -> Var<T> {
        let s = T::of(slope);
        let f = move |v: T| if v > T::zero() { v } else { v * s };
        self.unary(x, x.shape().to_vec(), || x.value().map(f), Op::LeakyRelu(x.clone(), s))
    }

    pub fn relu(&self, x: &Var<T>) -> Var<T> {
        self.leaky_relu(x, 0.0)
    }

    /// Depth-to-space: `[N, C·r², H, W] → [N, C, H·r, W·r]`.
    pub fn pixel_shuffle(&self, x: &Var<T>, r: usize) -> Var<T> {
        let (n, c, h, w) = dims(x.shape());
        assert_eq!(c % (r * r), 0, "pixel_shuffle: {c} channels not divisible by {}", r * r);
        let shape = vec![n, c / (r * r), h * r, w * r];
        let compute = || Tensor::new(shape.clone(), shuffle(x.value().data(), n, c / (r * r), h, w, r, true)).unwrap();
        self.unary(x, shape.clone(), compute, Op::PixelShuffle(x.clone(), r))
    }

    /// Space-to-depth: `[N, C, H, W] → [N, C·r², H/r, W/r]`.
    pub fn space_to_depth(&self, x: &Var<T>, r: usize) -> Var<T> {
        let (n, c, h, w) = dims(x.shape());
        assert!(h % r == 0 && w % r == 0, "space_to_depth: {h}x{w} not divisible by {r}");
        let shape = vec![n, c * r * r, h / r, w / r];
        let compute =
            || Tensor::new(shape.clone(), shuffle(x.value().data(), n, c, h / r, w / r, r, false)).unwrap();
        self.unary(x, shape.clone(), compute, Op::SpaceToDepth(x.clone(), r))
    }

    /// Fixed bilinear 2× upsampling (half-pixel centres, clamped edges).
    pub fn upsample2(&self, x: &Var<T>) -> Var<T> {
        let (n, c, h, w) = dims(x.shape());
        let shape = vec![n, c, 2 * h, 2 * w];
        let compute = || {
            let xd = x.value().data();
            let mut out = vec![T::zero(); n * c * 4 * h * w];
            upsample_apply(n * c, h, w, |p, src, dst, wt: T| {
                out[p * 4 * h * w + dst] += wt * xd[p * h * w + src];
            });
            Tensor::new(vec![n, c, 2 * h, 2 * w], out).unwrap()
        };
        self.unary(x, shape, compute, Op::Upsample2(x.clone()))
    }

    /// 2×2 mean pooling.
    pub fn avg_pool2(&self, x: &Var<T>) -> Var<T> {
        let (n, c, h, w) = dims(x.shape());
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even extents");
        let (ho, wo) = (h / 2, w / 2);
        let shape = vec![n, c, ho, wo];
        let compute = || {
            let xd = x.value().data();
            let q = T::of(0.25);
            let mut out = vec![T::zero(); n * c * ho * wo];
            for p in 0..n * c {
                let src = &xd[p * h * w..(p + 1) * h * w];
                for y in 0..ho {
                    for xx in 0..wo {
                        let i = 2 * y * w + 2 * xx;
                        out[p * ho * wo + y * wo + xx] = q * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                    }
                }
            }
            Tensor::new(vec![n, c, ho, wo], out).unwrap()
        };
        self.unary(x, shape, compute, Op::AvgPool2(x.clone()))
    }

    /// Softmax across the channel axis at every pixel.
    pub fn softmax_channels(&self, x: &Var<T>) -> Var<T> {
        let (n, c, h, w) = dims(x.shape());
        let compute = || {
            let xd = x.value().data();
            let plane = h * w;
            let mut out = vec![T::zero(); xd.len()];
            for s in 0..n {
                for i in 0..plane {
                    let idx = |ch: usize| (s * c + ch) * plane + i;
                    let m = (0..c).map(|ch| xd[idx(ch)]).fold(T::neg_infinity(), T::max);
                    let mut z = T::zero();
                    for ch in 0..c {
                        let e = (xd[idx(ch)] - m).exp();
                        out[idx(ch)] = e;
                        z += e;
                    }
                    for ch in 0..c {
                        out[idx(ch)] /= z;
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), out).unwrap()
        };
        self.unary(x, x.shape().to_vec(), compute, Op::SoftmaxChannels(x.clone()))
    }

    /// `max(x, 0)^p`.
    pub fn powf(&self, x: &Var<T>, p: f64) -> Var<T> {
        let pt = T::of(p);
        self.unary(
            x,
            x.shape().to_vec(),
            || x.value().map(|v| v.max(T::zero()).powf(pt)),
            Op::Powf(x.clone(), pt),
        )
    }

    pub fn ln(&self, x: &Var<T>) -> Var<T> {
        self.unary(x, x.shape().to_vec(), || x.value().map(|v| v.ln()), Op::Ln(x.clone()))
    }

    pub fn abs(&self, x: &Var<T>) -> Var<T> {
        self.unary(x, x.shape().to_vec(), || x.value().map(|v| v.abs()), Op::Abs(x.clone()))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self, x: &Var<T>) -> Var<T> {
        self.unary(
            x,
            vec![1],
            || Tensor::scalar(T::of(x.value().sum_f64())),
            Op::Sum(x.clone()),
        )
    }

    pub fn mean(&self, x: &Var<T>) -> Var<T> {
        let n = x.value().numel().max(1);
        let s = self.sum(x);
        self.scale(&s, 1.0 / n as f64)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: &Var<T>) -> Gradients<T> {
        assert_eq!(output.value().numel(), 1, "backward needs a scalar output");
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![output.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            for p in parents(&v.0.op) {
                stack.push(p.clone());
            }
            order.push(v);
        }
        order.sort_by_key(|v| std::cmp::Reverse(v.id()));

        let mut grads: HashMap<usize, Tensor<T>> = HashMap::new();
        grads.insert(output.id(), Tensor::full(output.shape().to_vec(), T::one()));
        let mut leaves = HashMap::new();
        for v in order {
            let Some(g) = grads.remove(&v.id()) else {
                continue;
            };
            if matches!(v.0.op, Op::Leaf) {
                leaves.insert(v.id(), g);
                continue;
            }
            let mut acc = |p: &Var<T>, t: Tensor<T>| {
                if !p.requires_grad() {
                    return;
                }
                match grads.get_mut(&p.id()) {
                    Some(e) => e.add_assign(&t),
                    None => {
                        grads.insert(p.id(), t);
                    }
                }
            };
            backprop(&v.0, &g, &mut acc);
        }
        Gradients { map: leaves }
    }
}

fn dims(shape: &[usize]) -> (usize, usize, usize, usize) {
    match shape[..] {
        [n, c, h, w] => (n, c, h, w),
        _ => panic!("expected a 4-D tensor, got {shape:?}"),
    }
}

/// Shared index map of pixel shuffle (`forward = true`, output `[n, c, h·r, w·r]`
/// from `[n, c·r², h, w]`) and its inverse.
fn shuffle<T: Scalar>(src: &[T], n: usize, c: usize, h: usize, w: usize, r: usize, forward: bool) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    let (hr, wr) = (h * r, w * r);
    for s in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let deep = s * c * r * r + ch * r * r + i * r + j;
                    for y in 0..h {
                        for x in 0..w {
                            let small = (deep * h + y) * w + x;
                            let big = ((s * c + ch) * hr + y * r + i) * wr + x * r + j;
                            if forward {
                                out[big] = src[small];
                            } else {
                                out[small] = src[big];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Visits every `(plane, src index, dst index, weight)` tap of a 2× bilinear
/// upsample of `planes` planes of size `h×w`.
fn upsample_apply<T: Scalar>(planes: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, T)) {
    let (ho, wo) = (2 * h, 2 * w);
    let xt: Vec<_> = (0..wo).map(|x| upsample_taps(x, w)).collect();
    let yt: Vec<_> = (0..ho).map(|y| upsample_taps(y, h)).collect();
    for p in 0..planes {
        for (y, &(y0, y1, fy)) in yt.iter().enumerate() {
            for (x, &(x0, x1, fx)) in xt.iter().enumerate() {
                let (fx, fy) = (T::of(fx as f64), T::of(fy as f64));
                let one = T::one();
                let dst = y * wo + x;
                f(p, y0 * w + x0, dst, (one - fx) * (one - fy));
                f(p, y0 * w + x1, dst, fx * (one - fy));
                f(p, y1 * w + x0, dst, (one - fx) * fy);
                f(p, y1 * w + x1, dst, fx * fy);
            }
        }
    }
}

fn parents<T: Scalar>(op: &Op<T>) -> Vec<&Var<T>> {
    match op {
        Op::Leaf => vec![],
        Op::Conv { x, w, b, .. } => {
            let mut v = vec![x, w];
            if let Some(b) = b {
                v.push(b);
            }
            v
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MulChannels(a, b) => vec![a, b],
        Op::Concat(parts) => parts.iter().collect(),
        Op::Scale(x, _)
        | Op::AddScalar(x)
        | Op::Narrow(x, _)
        | Op::Sigmoid(x)
        | Op::Softplus(x)
        | Op::LeakyRelu(x, _)
        | Op::PixelShuffle(x, _)
        | Op::SpaceToDepth(x, _)
        | Op::Upsample2(x)
        | Op::AvgPool2(x)
        | Op::SoftmaxChannels(x)
        | Op::Powf(x, _)
        | Op::Ln(x)
        | Op::Abs(x)
        | Op::Sum(x) => vec![x],
    }
}

fn backprop<T: Scalar>(node: &Node<T>, g: &Tensor<T>, acc: &mut impl FnMut(&Var<T>, Tensor<T>)) {
    let gd = g.data();
    match &node.op {
        Op::Leaf => {}
        Op::Conv { x, w, b, spec } => {
            let grads = conv::backward(x.value(), w.value(), g, *spec, x.requires_grad());
            if let Some(gx) = grads.input {
                acc(x, gx);
            }
            acc(w, grads.weight);
            if let Some(b) = b {
                acc(b, grads.bias);
            }
        }
        Op::Add(a, b) => {
            acc(a, g.clone());
            acc(b, g.clone());
        }
        Op::Sub(a, b) => {
            acc(a, g.clone());
            acc(b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                acc(a, g.zip_map(b.value(), |p, q| p * q));
            }
            if b.requires_grad() {
                acc(b, g.zip_map(a.value(), |p, q| p * q));
            }
        }
        Op::MulChannels(x, w) => {
            let (n, c, h, wd) = dims(x.shape());
            let plane = h * wd;
            let (xd, wm) = (x.value().data(), w.value().data());
            if x.requires_grad() {
                let mut gx = vec![T::zero(); xd.len()];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * plane;
                        for i in 0..plane {
                            gx[base + i] = gd[base + i] * wm[s * plane + i];
                        }
                    }
                }
                acc(x, Tensor::new(x.shape().to_vec(), gx).unwrap());
            }
            if w.requires_grad() {
                let mut gw = vec![T::zero(); n * plane];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * plane;
                        for i in 0..plane {
                            gw[s * plane + i] += gd[base + i] * xd[base + i];
                        }
                    }
                }
                acc(w, Tensor::new(w.shape().to_vec(), gw).unwrap());
            }
        }
        Op::Scale(x, s) => {
            let s = *s;
            acc(x, g.map(|v| v * s));
        }
        Op::AddScalar(x) => acc(x, g.clone()),
        Op::Concat(parts) => {
            let (n, c_total, h, w) = dims(node.value.shape());
            let plane = h * w;
            let mut offset = 0;
            for p in parts {
                let c = p.shape()[1];
                if p.requires_grad() {
                    let mut out = Vec::with_capacity(n * c * plane);
                    for s in 0..n {
                        let base = (s * c_total + offset) * plane;
                        out.extend_from_slice(&gd[base..base + c * plane]);
                    }
                    acc(p, Tensor::new(p.shape().to_vec(), out).unwrap());
                }
                offset += c;
            }
        }
        Op::Narrow(x, start) => {
            let (n, c, h, w) = dims(x.shape());
            let len = node.value.shape()[1];
            let plane = h * w;
            let mut gx = vec![T::zero(); n * c * plane];
            for s in 0..n {
                let dst = (s * c + start) * plane;
                gx[dst..dst + len * plane].copy_from_slice(&gd[s * len * plane..(s + 1) * len * plane]);
            }
            acc(x, Tensor::new(x.shape().to_vec(), gx).unwrap());
        }
        Op::Sigmoid(x) => {
            acc(x, g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y)));
        }
        Op::Softplus(x) => {
            acc(x, g.zip_map(x.value(), |gv, v| gv * sigmoid_scalar(v)));
        }
        Op::LeakyRelu(x, s) => {
            let s = *s;
            acc(x, g.zip_map(x.value(), |gv, v| if v > T::zero() { gv } else { gv * s }));
        }
        Op::PixelShuffle(x, r) => {
            let (n, c, h, w) = dims(x.shape());
            let r = *r;
            acc(x, Tensor::new(x.shape().to_vec(), shuffle(gd, n, c / (r * r), h, w, r, false)).unwrap());
        }
        Op::SpaceToDepth(x, r) => {
            let (n, c, h, w) = dims(x.shape());
            let r = *r;
            acc(x, Tensor::new(x.shape().to_vec(), shuffle(gd, n, c, h / r, w / r, r, true)).unwrap());
        }
        Op::Upsample2(x) => {
            let (n, c, h, w) = dims(x.shape());
            let mut gx = vec![T::zero(); n * c * h * w];
            upsample_apply(n * c, h, w, |p, src, dst, wt: T| {
                gx[p * h * w + src] += wt * gd[p * 4 * h * w + dst];
            });
            acc(x, Tensor::new(x.shape().to_vec(), gx).unwrap());
        }
        Op::AvgPool2(x) => {
            let (n, c, h, w) = dims(x.shape());
            let (ho, wo) = (h / 2, w / 2);
            let q = T::of(0.25);
            let mut gx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                for y in 0..h {
                    for xx in 0..w {
                        gx[p * h * w + y * w + xx] = q * gd[p * ho * wo + (y / 2) * wo + xx / 2];
                    }
                }
            }
            acc(x, Tensor::new(x.shape().to_vec(), gx).unwrap());
        }
        Op::SoftmaxChannels(x) => {
            let (n, c, h, w) = dims(x.shape());
            let plane = h * w;
            let y = node.value.data();
            let mut gx = vec![T::zero(); y.len()];
            for s in 0..n {
                for i in 0..plane {
                    let idx = |ch: usize| (s * c + ch) * plane + i;
                    let dot: T = (0..c).map(|ch| gd[idx(ch)] * y[idx(ch)]).sum();
                    for ch in 0..c {
                        gx[idx(ch)] = y[idx(ch)] * (gd[idx(ch)] - dot);
                    }
                }
            }
            acc(x, Tensor::new(x.shape().to_vec(), gx).unwrap());
        }
        Op::Powf(x, p) => {
            let p = *p;
            // floor keeps fractional powers finite near zero
            let floor = T::of(1e-6);
            acc(
                x,
                g.zip_map(x.value(), |gv, v| {
                    if gv == T::zero() || v <= T::zero() {
                        T::zero()
                    } else {
                        gv * p * v.max(floor).powf(p - T::one())
                    }
                }),
            );
        }
        Op::Ln(x) => acc(x, g.zip_map(x.value(), |gv, v| gv / v)),
        Op::Abs(x) => acc(
            x,
            g.zip_map(x.value(), |gv, v| {
                if v > T::zero() {
                    gv
                } else if v < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            }),
        ),
        Op::Sum(x) => acc(x, Tensor::full(x.shape().to_vec(), gd[0])),
    }
}

#[cfg(test)]
mod tests;
