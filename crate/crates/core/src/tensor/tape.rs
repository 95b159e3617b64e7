use std::cell::{Cell, Ref, RefCell};

use super::conv::{self, Conv1dDims, Conv2dDims};
use super::fft::{check_pow2, fft2_along_last_two, fft_along_last};
use super::{ComplexTensor, RealTensor, Value};
use crate::error::{Error, Result};

/// Smallest divisor modulus accepted by complex division.
pub const DEFAULT_EPS_DIV: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Softplus,
    Tanh,
    Sqrt,
    Exp,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Conj(usize),
    Abs(usize),
    AbsSq(usize),
    ExpI(usize),
    MakeComplex(usize, usize),
    RealPart(usize),
    ImagPart(usize),
    Unary(usize, UnaryKind),
    Sum(usize),
    SumAxis(usize, usize),
    Expand(usize),
    Reshape(usize),
    Narrow { src: usize, axis: usize, start: usize },
    Concat { srcs: Vec<usize>, axis: usize },
    MatMul(usize, usize),
    Conv1d { x: usize, w: usize, b: usize, dims: Conv1dDims },
    Conv2d { x: usize, w: usize, b: usize, dims: Conv2dDims },
    Upsample2(usize),
    Fft { src: usize, inverse: bool, two_d: bool },
    FloorModulus { src: usize, eps: f64 },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
    trainable: bool,
    grad: Option<Value>,
}

/// Records operations in creation order; `backward` walks them in reverse.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
    eps_div: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

/// Complex view of a node value with scalar broadcasting.
struct Cv<'a> {
    re: &'a [f64],
    im: Option<&'a [f64]>,
    scalar: bool,
}

impl<'a> Cv<'a> {
    fn of(v: &'a Value, n: usize) -> Self {
        Cv {
            re: v.re_plane(),
            im: v.im_plane(),
            scalar: v.numel() == 1 && n != 1,
        }
    }

    #[inline]
    fn at(&self, i: usize) -> (f64, f64) {
        let j = if self.scalar { 0 } else { i };
        (self.re[j], self.im.map_or(0.0, |p| p[j]))
    }
}

fn complex_value(shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> Value {
    Value::Complex(ComplexTensor::from_parts(shape, re, im).expect("consistent planes"))
}

fn real_value(shape: &[usize], data: Vec<f64>) -> Value {
    Value::Real(RealTensor::new(shape.to_vec(), data).expect("consistent data"))
}

/// Projects an incoming gradient onto the type and shape of `like`.
/// Scalar operands broadcast in the forward pass receive the summed gradient.
fn conform(re: Vec<f64>, im: Vec<f64>, like: &Value) -> Value {
    let (re, im) = if like.numel() == 1 && re.len() != 1 {
        (vec![re.iter().sum()], vec![im.iter().sum()])
    } else {
        (re, im)
    };
    match like {
        Value::Real(_) => real_value(like.shape(), re),
        Value::Complex(_) => complex_value(like.shape(), re, im),
    }
}

fn grad_planes(g: &Value) -> (Vec<f64>, Vec<f64>) {
    let re = g.re_plane().to_vec();
    let im = g.im_plane().map(|p| p.to_vec()).unwrap_or_else(|| vec![0.0; re.len()]);
    (re, im)
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Source index for every element of `target` when broadcasting `src`.
fn broadcast_index_map(src: &[usize], target: &[usize]) -> Result<Vec<usize>> {
    if src.len() > target.len() {
        return Err(Error::shape("expand", src, target));
    }
    let offset = target.len() - src.len();
    let mut src_strides = vec![0usize; target.len()];
    let mut stride = 1;
    for d in (0..src.len()).rev() {
        let t = target[d + offset];
        if src[d] == t {
            src_strides[d + offset] = stride;
        } else if src[d] != 1 {
            return Err(Error::shape("expand", src, target));
        }
        stride *= src[d];
    }
    let n: usize = target.iter().product();
    let mut map = vec![0usize; n];
    let mut idx = vec![0usize; target.len()];
    for m in map.iter_mut() {
        *m = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        for d in (0..target.len()).rev() {
            idx[d] += 1;
            if idx[d] < target[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(map)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_eps_div(DEFAULT_EPS_DIV)
    }

    pub fn with_eps_div(eps_div: f64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            eps_div,
        }
    }

    pub fn eps_div(&self) -> f64 {
        self.eps_div
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable leaf: receives gradients on `backward`.
    pub fn param(&self, value: impl Into<Value>) -> Var<'_> {
        self.leaf(value.into(), true)
    }

    /// A constant leaf: never receives gradients.
    pub fn constant(&self, value: impl Into<Value>) -> Var<'_> {
        self.leaf(value.into(), false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(RealTensor::scalar(v))
    }

    fn leaf(&self, value: Value, trainable: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn check_live(&self, ids: &[usize]) -> Result<()> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let n = self.nodes.borrow().len();
        if ids.iter().any(|&i| i >= n) {
            return Err(Error::TapeConsumed);
        }
        Ok(())
    }

    fn push(&self, value: Value, op: Op, inputs: &[usize]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable: false,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn node_value(&self, id: usize) -> Ref<'_, Value> {
        Ref::map(self.nodes.borrow(), move |n| &n[id].value)
    }

    /// Builds a complex tensor from real and imaginary parts.
    pub fn complex<'t>(&'t self, re: Var<'t>, im: Var<'t>) -> Result<Var<'t>> {
        self.check_live(&[re.id, im.id])?;
        let value = {
            let (a, b) = (self.node_value(re.id), self.node_value(im.id));
            let (Value::Real(a), Value::Real(b)) = (&*a, &*b) else {
                return Err(Error::TypeMismatch {
                    op: "complex",
                    expected: "two real",
                });
            };
            Value::Complex(ComplexTensor::new(a.clone(), b.clone())?)
        };
        Ok(self.push(value, Op::MakeComplex(re.id, im.id), &[re.id, im.id]))
    }

    /// Concatenates along `axis`; all inputs share type and the other dims.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        self.check_live(&ids)?;
        if parts.is_empty() {
            return Err(Error::ConfigInvalid("concat of nothing".into()));
        }
        let value = {
            let first = self.node_value(ids[0]);
            let base = first.shape().to_vec();
            let complex = first.is_complex();
            drop(first);
            if axis >= base.len() {
                return Err(Error::shape("concat", &base, &[axis]));
            }
            let mut total = 0;
            for &id in &ids {
                let v = self.node_value(id);
                let s = v.shape();
                if s.len() != base.len() || v.is_complex() != complex || s.iter().enumerate().any(|(d, &x)| d != axis && x != base[d]) {
                    return Err(Error::shape("concat", &base, s));
                }
                total += s[axis];
            }
            let mut shape = base.clone();
            shape[axis] = total;
            let outer: usize = base[..axis].iter().product();
            let inner: usize = base[axis + 1..].iter().product();
            let n: usize = shape.iter().product();
            let mut re = Vec::with_capacity(n);
            let mut im = Vec::with_capacity(if complex { n } else { 0 });
            for o in 0..outer {
                for &id in &ids {
                    let v = self.node_value(id);
                    let len = v.shape()[axis] * inner;
                    re.extend_from_slice(&v.re_plane()[o * len..(o + 1) * len]);
                    if let Some(p) = v.im_plane() {
                        im.extend_from_slice(&p[o * len..(o + 1) * len]);
                    }
                }
            }
            if complex {
                complex_value(&shape, re, im)
            } else {
                real_value(&shape, re)
            }
        };
        Ok(self.push(value, Op::Concat { srcs: ids.clone(), axis }, &ids))
    }

    /// Drops every gradient accumulated on the leaves.
    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    /// Releases the graph. Further use reports [`Error::TapeConsumed`].
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.consumed.set(true);
    }

    /// Reverse sweep from a real scalar. Trainable leaves accumulate.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        self.check_live(&[loss.id])?;
        let mut leaf_grads = Vec::new();
        {
            let nodes = self.nodes.borrow();
            match &nodes[loss.id].value {
                Value::Real(t) if t.numel() == 1 => {}
                _ => {
                    return Err(Error::TypeMismatch {
                        op: "backward",
                        expected: "a real scalar loss",
                    })
                }
            }
            let mut grads: Vec<Option<Value>> = vec![None; loss.id + 1];
            grads[loss.id] = Some(real_value(nodes[loss.id].value.shape(), vec![1.0]));
            for id in (0..=loss.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                if let Op::Leaf = node.op {
                    if node.trainable {
                        leaf_grads.push((id, g));
                    }
                    continue;
                }
                for (input, gi) in backward_rule(&nodes, id, &g)? {
                    if !nodes[input].requires_grad {
                        continue;
                    }
                    match &mut grads[input] {
                        Some(acc) => acc.accumulate(&gi),
                        slot @ None => *slot = Some(gi),
                    }
                }
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.accumulate(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn backward_rule(nodes: &[Node], id: usize, g: &Value) -> Result<Vec<(usize, Value)>> {
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    let n = node.value.numel();
    let out = match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) => {
            let (re, im) = grad_planes(g);
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let gb = conform(
                re.iter().map(|v| sign * v).collect(),
                im.iter().map(|v| sign * v).collect(),
                val(*b),
            );
            vec![(*a, conform(re, im, val(*a))), (*b, gb)]
        }
        Op::Mul(a, b) => {
            let gc = Cv::of(g, n);
            let av = Cv::of(val(*a), n);
            let bv = Cv::of(val(*b), n);
            let (mut ar, mut ai, mut br, mut bi) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for i in 0..n {
                let (gr, gi) = gc.at(i);
                let (xr, xi) = av.at(i);
                let (yr, yi) = bv.at(i);
                // G * conj(other)
                ar[i] = gr * yr + gi * yi;
                ai[i] = gi * yr - gr * yi;
                br[i] = gr * xr + gi * xi;
                bi[i] = gi * xr - gr * xi;
            }
            vec![(*a, conform(ar, ai, val(*a))), (*b, conform(br, bi, val(*b)))]
        }
        Op::Div(a, b) => {
            let gc = Cv::of(g, n);
            let bv = Cv::of(val(*b), n);
            let wv = Cv::of(&node.value, n);
            let (mut ar, mut ai, mut br, mut bi) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for i in 0..n {
                let (gr, gi) = gc.at(i);
                let (yr, yi) = bv.at(i);
                let (wr, wi) = wv.at(i);
                // Ga = G / conj(b)
                let d = yr * yr + yi * yi;
                let (gar, gai) = ((gr * yr - gi * yi) / d, (gi * yr + gr * yi) / d);
                ar[i] = gar;
                ai[i] = gai;
                // Gb = -Ga * conj(w)
                br[i] = -(gar * wr + gai * wi);
                bi[i] = -(gai * wr - gar * wi);
            }
            vec![(*a, conform(ar, ai, val(*a))), (*b, conform(br, bi, val(*b)))]
        }
        Op::Neg(a) => {
            let (re, im) = grad_planes(g);
            vec![(
                *a,
                conform(re.iter().map(|v| -v).collect(), im.iter().map(|v| -v).collect(), val(*a)),
            )]
        }
        Op::Conj(a) => {
            let (re, im) = grad_planes(g);
            vec![(*a, conform(re, im.iter().map(|v| -v).collect(), val(*a)))]
        }
        Op::Abs(a) => {
            let src = val(*a);
            let gr = g.re_plane();
            let zr = src.re_plane();
            let (mut re, mut im) = (vec![0.0; n], vec![0.0; n]);
            let absv = node.value.re_plane();
            match src.im_plane() {
                Some(zi) => {
                    for i in 0..n {
                        if absv[i] > 0.0 {
                            re[i] = gr[i] * zr[i] / absv[i];
                            im[i] = gr[i] * zi[i] / absv[i];
                        }
                    }
                }
                None => {
                    for i in 0..n {
                        if zr[i] != 0.0 {
                            re[i] = gr[i] * zr[i].signum();
                        }
                    }
                }
            }
            vec![(*a, conform(re, im, src))]
        }
        Op::AbsSq(a) => {
            let src = val(*a);
            let gr = g.re_plane();
            let re: Vec<f64> = (0..n).map(|i| 2.0 * gr[i] * src.re_plane()[i]).collect();
            let im: Vec<f64> = match src.im_plane() {
                Some(zi) => (0..n).map(|i| 2.0 * gr[i] * zi[i]).collect(),
                None => vec![0.0; n],
            };
            vec![(*a, conform(re, im, src))]
        }
        Op::ExpI(a) => {
            let gc = Cv::of(g, n);
            let wv = Cv::of(&node.value, n);
            let re: Vec<f64> = (0..n)
                .map(|i| {
                    let (gr, gi) = gc.at(i);
                    let (wr, wi) = wv.at(i);
                    -gr * wi + gi * wr
                })
                .collect();
            vec![(*a, real_value(val(*a).shape(), re))]
        }
        Op::MakeComplex(r, i) => {
            let (re, im) = grad_planes(g);
            vec![(*r, real_value(val(*r).shape(), re)), (*i, real_value(val(*i).shape(), im))]
        }
        Op::RealPart(a) => {
            let re = g.re_plane().to_vec();
            vec![(*a, conform(re, vec![0.0; n], val(*a)))]
        }
        Op::ImagPart(a) => {
            let im = g.re_plane().to_vec();
            vec![(*a, conform(vec![0.0; n], im, val(*a)))]
        }
        Op::Unary(a, kind) => {
            let x = val(*a).re_plane();
            let y = node.value.re_plane();
            let gr = g.re_plane();
            let d: Vec<f64> = (0..n)
                .map(|i| {
                    let local = match kind {
                        UnaryKind::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::LeakyRelu(s) => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                *s
                            }
                        }
                        UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                        UnaryKind::Softplus => sigmoid(x[i]),
                        UnaryKind::Tanh => 1.0 - y[i] * y[i],
                        UnaryKind::Sqrt => {
                            if y[i] > 0.0 {
                                0.5 / y[i]
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Exp => y[i],
                    };
                    gr[i] * local
                })
                .collect();
            vec![(*a, real_value(val(*a).shape(), d))]
        }
        Op::Sum(a) => {
            let src = val(*a);
            let m = src.numel();
            let gr = g.re_plane()[0];
            let gi = g.im_plane().map_or(0.0, |p| p[0]);
            vec![(*a, conform(vec![gr; m], vec![gi; m], src))]
        }
        Op::SumAxis(a, axis) => {
            let src = val(*a);
            let (outer, len, inner) = outer_inner(src.shape(), *axis);
            let (gre, gim) = grad_planes(g);
            let m = src.numel();
            let (mut re, mut im) = (vec![0.0; m], vec![0.0; m]);
            for o in 0..outer {
                for k in 0..len {
                    for j in 0..inner {
                        re[(o * len + k) * inner + j] = gre[o * inner + j];
                        im[(o * len + k) * inner + j] = gim[o * inner + j];
                    }
                }
            }
            vec![(*a, conform(re, im, src))]
        }
        Op::Expand(a) => {
            let src = val(*a);
            let map = broadcast_index_map(src.shape(), node.value.shape())?;
            let (gre, gim) = grad_planes(g);
            let m = src.numel();
            let (mut re, mut im) = (vec![0.0; m], vec![0.0; m]);
            for (i, &s) in map.iter().enumerate() {
                re[s] += gre[i];
                im[s] += gim[i];
            }
            vec![(*a, conform(re, im, src))]
        }
        Op::Reshape(a) => {
            let (re, im) = grad_planes(g);
            vec![(*a, conform(re, im, val(*a)))]
        }
        Op::Narrow { src, axis, start } => {
            let s = val(*src);
            let (outer, len, inner) = outer_inner(s.shape(), *axis);
            let sub = node.value.shape()[*axis];
            let (gre, gim) = grad_planes(g);
            let m = s.numel();
            let (mut re, mut im) = (vec![0.0; m], vec![0.0; m]);
            for o in 0..outer {
                let dst = (o * len + start) * inner;
                let from = o * sub * inner;
                re[dst..dst + sub * inner].copy_from_slice(&gre[from..from + sub * inner]);
                im[dst..dst + sub * inner].copy_from_slice(&gim[from..from + sub * inner]);
            }
            vec![(*src, conform(re, im, s))]
        }
        Op::Concat { srcs, axis } => {
            let shape = node.value.shape();
            let (outer, total, inner) = outer_inner(shape, *axis);
            let (gre, gim) = grad_planes(g);
            let mut offset = 0;
            let mut res = Vec::with_capacity(srcs.len());
            for &s in srcs {
                let sv = val(s);
                let len = sv.shape()[*axis];
                let m = sv.numel();
                let (mut re, mut im) = (Vec::with_capacity(m), Vec::with_capacity(m));
                for o in 0..outer {
                    let from = (o * total + offset) * inner;
                    re.extend_from_slice(&gre[from..from + len * inner]);
                    im.extend_from_slice(&gim[from..from + len * inner]);
                }
                offset += len;
                res.push((s, conform(re, im, sv)));
            }
            res
        }
        Op::MatMul(a, b) => {
            let av = val(*a);
            let bv = val(*b);
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let p = bv.shape()[1];
            let am = av.re_plane();
            let (gre, gim) = grad_planes(g);
            // G_a[i,j] = sum_q Re(G[i,q] conj(b[j,q]))
            let mut ga = vec![0.0; m * k];
            let br = bv.re_plane();
            let bi = bv.im_plane();
            for i in 0..m {
                for j in 0..k {
                    let mut acc = 0.0;
                    for q in 0..p {
                        acc += gre[i * p + q] * br[j * p + q];
                        if let Some(bi) = bi {
                            acc += gim[i * p + q] * bi[j * p + q];
                        }
                    }
                    ga[i * k + j] = acc;
                }
            }
            // G_b = a^T G
            let (mut gbr, mut gbi) = (vec![0.0; k * p], vec![0.0; k * p]);
            for i in 0..m {
                for j in 0..k {
                    let w = am[i * k + j];
                    if w == 0.0 {
                        continue;
                    }
                    for q in 0..p {
                        gbr[j * p + q] += w * gre[i * p + q];
                        gbi[j * p + q] += w * gim[i * p + q];
                    }
                }
            }
            vec![(*a, real_value(av.shape(), ga)), (*b, conform(gbr, gbi, bv))]
        }
        Op::Conv1d { x, w, b, dims } => {
            let need_x = nodes[*x].requires_grad;
            let (gx, gw, gb) = conv::conv1d_backward(g.re_plane(), val(*x).re_plane(), val(*w).re_plane(), *dims, need_x);
            let mut res = vec![(*w, real_value(val(*w).shape(), gw)), (*b, real_value(val(*b).shape(), gb))];
            if let Some(gx) = gx {
                res.push((*x, real_value(val(*x).shape(), gx)));
            }
            res
        }
        Op::Conv2d { x, w, b, dims } => {
            let need_x = nodes[*x].requires_grad;
            let (gx, gw, gb) = conv::conv2d_backward(g.re_plane(), val(*x).re_plane(), val(*w).re_plane(), *dims, need_x);
            let mut res = vec![(*w, real_value(val(*w).shape(), gw)), (*b, real_value(val(*b).shape(), gb))];
            if let Some(gx) = gx {
                res.push((*x, real_value(val(*x).shape(), gx)));
            }
            res
        }
        Op::Upsample2(a) => {
            let s = val(*a).shape().to_vec();
            let gx = conv::upsample2_backward(g.re_plane(), s[0], s[1], s[2]);
            vec![(*a, real_value(&s, gx))]
        }
        Op::Fft { src, inverse, two_d } => {
            // Unitary transform: the adjoint is the opposite direction.
            let (mut re, mut im) = grad_planes(g);
            let shape = node.value.shape();
            if *two_d {
                let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                fft2_along_last_two(&mut re, &mut im, h, w, !inverse)?;
            } else {
                fft_along_last(&mut re, &mut im, shape[shape.len() - 1], !inverse)?;
            }
            vec![(*src, conform(re, im, val(*src)))]
        }
        Op::FloorModulus { src, eps } => {
            let s = val(*src);
            let (mut re, mut im) = grad_planes(g);
            let zr = s.re_plane();
            let zi = s.im_plane();
            for i in 0..n {
                let m = match zi {
                    Some(zi) => zr[i].hypot(zi[i]),
                    None => zr[i].abs(),
                };
                if m < *eps {
                    if m == 0.0 {
                        re[i] = 0.0;
                        im[i] = 0.0;
                    } else {
                        // w = eps * z/|z|: only the phase direction passes.
                        let (ur, ui) = (zr[i] / m, zi.map_or(0.0, |p| p[i]) / m);
                        let radial = re[i] * ur + im[i] * ui;
                        re[i] = eps / m * (re[i] - radial * ur);
                        im[i] = eps / m * (im[i] - radial * ui);
                    }
                }
            }
            vec![(*src, conform(re, im, s))]
        }
    };
    Ok(out)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.node_value(self.id).shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.node_value(self.id).numel()
    }

    pub fn is_complex(&self) -> bool {
        self.tape.node_value(self.id).is_complex()
    }

    pub fn value(&self) -> Value {
        self.tape.node_value(self.id).clone()
    }

    /// Real value; fails on complex nodes.
    pub fn real(&self) -> Result<RealTensor> {
        match &*self.tape.node_value(self.id) {
            Value::Real(t) => Ok(t.clone()),
            Value::Complex(_) => Err(Error::TypeMismatch {
                op: "real",
                expected: "a real",
            }),
        }
    }

    /// Complex value; real nodes are promoted.
    pub fn complex(&self) -> ComplexTensor {
        match &*self.tape.node_value(self.id) {
            Value::Real(t) => ComplexTensor::from_real(t.clone()),
            Value::Complex(t) => t.clone(),
        }
    }

    /// First real coordinate; meant for scalar nodes.
    pub fn item(&self) -> f64 {
        self.tape.node_value(self.id).re_plane()[0]
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self) -> Option<Value> {
        self.tape.nodes.borrow().get(self.id).and_then(|n| n.grad.clone())
    }

    fn binary(self, other: Var<'t>, kind: u8) -> Result<Var<'t>> {
        let tape = self.tape;
        tape.check_live(&[self.id, other.id])?;
        let (op_name, op) = match kind {
            0 => ("add", Op::Add(self.id, other.id)),
            1 => ("sub", Op::Sub(self.id, other.id)),
            2 => ("mul", Op::Mul(self.id, other.id)),
            _ => ("cdiv", Op::Div(self.id, other.id)),
        };
        let value = {
            let a = tape.node_value(self.id);
            let b = tape.node_value(other.id);
            let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
            let shape = if sa == sb || b.numel() == 1 {
                sa.clone()
            } else if a.numel() == 1 {
                sb.clone()
            } else {
                return Err(Error::shape(op_name, &sa, &sb));
            };
            let n: usize = shape.iter().product();
            let complex = a.is_complex() || b.is_complex();
            let av = Cv::of(&a, n);
            let bv = Cv::of(&b, n);
            let (mut re, mut im) = (vec![0.0; n], vec![0.0; n]);
            if kind == 3 {
                let eps = tape.eps_div;
                for i in 0..n {
                    let (yr, yi) = bv.at(i);
                    let m = yr.hypot(yi);
                    if m < eps || !m.is_finite() {
                        return Err(Error::DivisionDegenerate { modulus: m, eps });
                    }
                }
            }
            for i in 0..n {
                let (xr, xi) = av.at(i);
                let (yr, yi) = bv.at(i);
                let (r, j) = match kind {
                    0 => (xr + yr, xi + yi),
                    1 => (xr - yr, xi - yi),
                    2 => (xr * yr - xi * yi, xr * yi + xi * yr),
                    _ => {
                        let d = yr * yr + yi * yi;
                        ((xr * yr + xi * yi) / d, (xi * yr - xr * yi) / d)
                    }
                };
                re[i] = r;
                im[i] = j;
            }
            if complex {
                complex_value(&shape, re, im)
            } else {
                real_value(&shape, re)
            }
        };
        Ok(tape.push(value, op, &[self.id, other.id]))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, 0)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, 1)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, 2)
    }

    /// Elementwise (complex) division; fails with `DivisionDegenerate` when
    /// any divisor modulus is below the tape's `eps_div`.
    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, 3)
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        let c = self.tape.scalar(s);
        self.mul(c)
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t>> {
        let c = self.tape.scalar(s);
        self.add(c)
    }

    fn map_unary(self, op: Op, f: impl FnOnce(&Value) -> Result<Value>) -> Result<Var<'t>> {
        self.tape.check_live(&[self.id])?;
        let value = f(&self.tape.node_value(self.id))?;
        Ok(self.tape.push(value, op, &[self.id]))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.map_unary(Op::Neg(self.id), |v| {
            Ok(match v {
                Value::Real(t) => real_value(t.shape(), t.data().iter().map(|x| -x).collect()),
                Value::Complex(t) => complex_value(
                    t.shape(),
                    t.re().data().iter().map(|x| -x).collect(),
                    t.im().data().iter().map(|x| -x).collect(),
                ),
            })
        })
    }

    pub fn conj(self) -> Result<Var<'t>> {
        self.map_unary(Op::Conj(self.id), |v| {
            Ok(match v {
                Value::Real(t) => Value::Real(t.clone()),
                Value::Complex(t) => complex_value(t.shape(), t.re().data().to_vec(), t.im().data().iter().map(|x| -x).collect()),
            })
        })
    }

    /// Modulus `|z|` (real output). The subgradient at 0 is 0.
    pub fn abs(self) -> Result<Var<'t>> {
        self.map_unary(Op::Abs(self.id), |v| {
            let data = match v {
                Value::Real(t) => t.data().iter().map(|x| x.abs()).collect(),
                Value::Complex(t) => t.re().data().iter().zip(t.im().data()).map(|(a, b)| a.hypot(*b)).collect(),
            };
            Ok(real_value(v.shape(), data))
        })
    }

    /// Squared modulus `|z|^2` (real output).
    pub fn abs_sq(self) -> Result<Var<'t>> {
        self.map_unary(Op::AbsSq(self.id), |v| {
            let data = match v {
                Value::Real(t) => t.data().iter().map(|x| x * x).collect(),
                Value::Complex(t) => t.re().data().iter().zip(t.im().data()).map(|(a, b)| a * a + b * b).collect(),
            };
            Ok(real_value(v.shape(), data))
        })
    }

    /// `e^{j x}` for a real tensor `x`.
    pub fn exp_i(self) -> Result<Var<'t>> {
        self.map_unary(Op::ExpI(self.id), |v| {
            let Value::Real(t) = v else {
                return Err(Error::TypeMismatch {
                    op: "exp_i",
                    expected: "a real",
                });
            };
            let (s, c): (Vec<f64>, Vec<f64>) = t.data().iter().map(|x| x.sin_cos()).unzip();
            Ok(complex_value(t.shape(), c, s))
        })
    }

    pub fn re(self) -> Result<Var<'t>> {
        self.map_unary(Op::RealPart(self.id), |v| Ok(real_value(v.shape(), v.re_plane().to_vec())))
    }

    pub fn im(self) -> Result<Var<'t>> {
        self.map_unary(Op::ImagPart(self.id), |v| {
            let data = v.im_plane().map(|p| p.to_vec()).unwrap_or_else(|| vec![0.0; v.numel()]);
            Ok(real_value(v.shape(), data))
        })
    }

    pub fn unary(self, kind: UnaryKind) -> Result<Var<'t>> {
        self.map_unary(Op::Unary(self.id, kind), |v| {
            let Value::Real(t) = v else {
                return Err(Error::TypeMismatch {
                    op: "nonlinear",
                    expected: "a real",
                });
            };
            let data = t
                .data()
                .iter()
                .map(|&x| match kind {
                    UnaryKind::Relu => x.max(0.0),
                    UnaryKind::LeakyRelu(s) => {
                        if x > 0.0 {
                            x
                        } else {
                            s * x
                        }
                    }
                    UnaryKind::Sigmoid => sigmoid(x),
                    UnaryKind::Softplus => softplus(x),
                    UnaryKind::Tanh => x.tanh(),
                    UnaryKind::Sqrt => x.max(0.0).sqrt(),
                    UnaryKind::Exp => x.exp(),
                })
                .collect();
            Ok(real_value(t.shape(), data))
        })
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Relu)
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>> {
        self.unary(UnaryKind::LeakyRelu(slope))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn softplus(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Softplus)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Sqrt)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Exp)
    }

    /// Sum of all elements (scalar of the same kind).
    pub fn sum(self) -> Result<Var<'t>> {
        self.map_unary(Op::Sum(self.id), |v| {
            let re: f64 = v.re_plane().iter().sum();
            Ok(match v.im_plane() {
                Some(p) => complex_value(&[], vec![re], vec![p.iter().sum()]),
                None => real_value(&[], vec![re]),
            })
        })
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        self.map_unary(Op::SumAxis(self.id, axis), |v| {
            let shape = v.shape();
            if axis >= shape.len() {
                return Err(Error::shape("sum_axis", shape, &[axis]));
            }
            let (outer, len, inner) = outer_inner(shape, axis);
            let mut out_shape = shape.to_vec();
            out_shape.remove(axis);
            let reduce = |p: &[f64]| {
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let row = &p[(o * len + k) * inner..(o * len + k + 1) * inner];
                        for (d, x) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                }
                out
            };
            let re = reduce(v.re_plane());
            Ok(match v.im_plane() {
                Some(p) => complex_value(&out_shape, re, reduce(p)),
                None => real_value(&out_shape, re),
            })
        })
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let len = self.shape().get(axis).copied().unwrap_or(1) as f64;
        self.sum_axis(axis)?.scale(1.0 / len)
    }

    /// Broadcasts to `shape` (trailing-aligned, size-1 dims stretch).
    pub fn expand(self, shape: &[usize]) -> Result<Var<'t>> {
        self.map_unary(Op::Expand(self.id), |v| {
            let map = broadcast_index_map(v.shape(), shape)?;
            let re: Vec<f64> = map.iter().map(|&s| v.re_plane()[s]).collect();
            Ok(match v.im_plane() {
                Some(p) => complex_value(shape, re, map.iter().map(|&s| p[s]).collect()),
                None => real_value(shape, re),
            })
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        self.map_unary(Op::Reshape(self.id), |v| {
            if shape.iter().product::<usize>() != v.numel() {
                return Err(Error::shape("reshape", v.shape(), shape));
            }
            Ok(match v {
                Value::Real(t) => Value::Real(t.clone().reshape(shape)?),
                Value::Complex(t) => Value::Complex(t.clone().reshape(shape)?),
            })
        })
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        self.map_unary(Op::Narrow { src: self.id, axis, start }, |v| {
            let shape = v.shape();
            if axis >= shape.len() || start + len > shape[axis] {
                return Err(Error::shape("narrow", shape, &[axis, start, len]));
            }
            let (outer, full, inner) = outer_inner(shape, axis);
            let mut out_shape = shape.to_vec();
            out_shape[axis] = len;
            let take = |p: &[f64]| {
                let mut out = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let from = (o * full + start) * inner;
                    out.extend_from_slice(&p[from..from + len * inner]);
                }
                out
            };
            let re = take(v.re_plane());
            Ok(match v.im_plane() {
                Some(p) => complex_value(&out_shape, re, take(p)),
                None => real_value(&out_shape, re),
            })
        })
    }

    /// `self [m x k]` (real) times `rhs [k x p]` (real or complex).
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        tape.check_live(&[self.id, rhs.id])?;
        let value = {
            let a = tape.node_value(self.id);
            let b = tape.node_value(rhs.id);
            let Value::Real(am) = &*a else {
                return Err(Error::TypeMismatch {
                    op: "matmul",
                    expected: "a real left operand",
                });
            };
            let (sa, sb) = (am.shape(), b.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::shape("matmul", sa, sb));
            }
            let (m, k, p) = (sa[0], sa[1], sb[1]);
            let prod = |plane: &[f64]| {
                let mut out = vec![0.0; m * p];
                for i in 0..m {
                    for j in 0..k {
                        let w = am.data()[i * k + j];
                        if w == 0.0 {
                            continue;
                        }
                        let row = &plane[j * p..(j + 1) * p];
                        for (o, x) in out[i * p..(i + 1) * p].iter_mut().zip(row) {
                            *o += w * x;
                        }
                    }
                }
                out
            };
            let re = prod(b.re_plane());
            match b.im_plane() {
                Some(pl) => complex_value(&[m, p], re, prod(pl)),
                None => real_value(&[m, p], re),
            }
        };
        Ok(tape.push(value, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// Same-padded 1D cross-correlation: `self [C_in x K]`,
    /// `weight [C_out x C_in x k]` (odd `k`), `bias [C_out]`.
    pub fn conv1d(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        tape.check_live(&[self.id, weight.id, bias.id])?;
        let (value, dims) = {
            let x = tape.node_value(self.id);
            let w = tape.node_value(weight.id);
            let b = tape.node_value(bias.id);
            if x.is_complex() || w.is_complex() || b.is_complex() {
                return Err(Error::TypeMismatch {
                    op: "conv1d",
                    expected: "real",
                });
            }
            let (sx, sw) = (x.shape(), w.shape());
            if sx.len() != 2 || sw.len() != 3 || sw[1] != sx[0] || sw[2] % 2 == 0 {
                return Err(Error::shape("conv1d", sx, sw));
            }
            if b.numel() != sw[0] {
                return Err(Error::shape("conv1d bias", b.shape(), &[sw[0]]));
            }
            let dims = Conv1dDims {
                cin: sx[0],
                cout: sw[0],
                len: sx[1],
                k: sw[2],
            };
            let out = conv::conv1d_forward(x.re_plane(), w.re_plane(), b.re_plane(), dims);
            (real_value(&[dims.cout, dims.len], out), dims)
        };
        Ok(tape.push(
            value,
            Op::Conv1d {
                x: self.id,
                w: weight.id,
                b: bias.id,
                dims,
            },
            &[self.id, weight.id, bias.id],
        ))
    }

    /// Same-padded 2D cross-correlation: `self [C_in x H x W]`,
    /// `weight [C_out x C_in x kh x kw]` (odd kernel), `bias [C_out]`.
    pub fn conv2d(self, weight: Var<'t>, bias: Var<'t>, stride: usize) -> Result<Var<'t>> {
        let tape = self.tape;
        tape.check_live(&[self.id, weight.id, bias.id])?;
        let (value, dims) = {
            let x = tape.node_value(self.id);
            let w = tape.node_value(weight.id);
            let b = tape.node_value(bias.id);
            if x.is_complex() || w.is_complex() || b.is_complex() {
                return Err(Error::TypeMismatch {
                    op: "conv2d",
                    expected: "real",
                });
            }
            let (sx, sw) = (x.shape(), w.shape());
            if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] % 2 == 0 || sw[3] % 2 == 0 || stride == 0 {
                return Err(Error::shape("conv2d", sx, sw));
            }
            if b.numel() != sw[0] {
                return Err(Error::shape("conv2d bias", b.shape(), &[sw[0]]));
            }
            let dims = Conv2dDims {
                cin: sx[0],
                cout: sw[0],
                h: sx[1],
                w: sx[2],
                kh: sw[2],
                kw: sw[3],
                stride,
            };
            let (ho, wo) = dims.out_hw();
            let out = conv::conv2d_forward(x.re_plane(), w.re_plane(), b.re_plane(), dims);
            (real_value(&[dims.cout, ho, wo], out), dims)
        };
        Ok(tape.push(
            value,
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                b: bias.id,
                dims,
            },
            &[self.id, weight.id, bias.id],
        ))
    }

    /// Nearest-neighbour 2x upsampling of `[C x H x W]`.
    pub fn upsample2(self) -> Result<Var<'t>> {
        self.map_unary(Op::Upsample2(self.id), |v| {
            let Value::Real(t) = v else {
                return Err(Error::TypeMismatch {
                    op: "upsample2",
                    expected: "a real",
                });
            };
            let s = t.shape();
            if s.len() != 3 {
                return Err(Error::shape("upsample2", s, &[0, 0, 0]));
            }
            let out = conv::upsample2_forward(t.data(), s[0], s[1], s[2]);
            Ok(real_value(&[s[0], 2 * s[1], 2 * s[2]], out))
        })
    }

    fn transform(self, inverse: bool, two_d: bool) -> Result<Var<'t>> {
        self.map_unary(
            Op::Fft {
                src: self.id,
                inverse,
                two_d,
            },
            |v| {
                let shape = v.shape().to_vec();
                let r = shape.len();
                if r == 0 || (two_d && r < 2) {
                    return Err(Error::shape("fft", &shape, &[]));
                }
                let mut re = v.re_plane().to_vec();
                let mut im = v.im_plane().map(|p| p.to_vec()).unwrap_or_else(|| vec![0.0; re.len()]);
                if two_d {
                    check_pow2(shape[r - 2])?;
                    check_pow2(shape[r - 1])?;
                    fft2_along_last_two(&mut re, &mut im, shape[r - 2], shape[r - 1], inverse)?;
                } else {
                    fft_along_last(&mut re, &mut im, shape[r - 1], inverse)?;
                }
                Ok(complex_value(&shape, re, im))
            },
        )
    }

    /// Unitary DFT along the last axis.
    pub fn fft(self) -> Result<Var<'t>> {
        self.transform(false, false)
    }

    pub fn ifft(self) -> Result<Var<'t>> {
        self.transform(true, false)
    }

    /// Unitary 2D DFT over the last two axes.
    pub fn fft2(self) -> Result<Var<'t>> {
        self.transform(false, true)
    }

    pub fn ifft2(self) -> Result<Var<'t>> {
        self.transform(true, true)
    }

    /// Raises every modulus below `eps` to `eps`, keeping the phase
    /// (zero maps to `eps + 0j`).
    pub fn floor_modulus(self, eps: f64) -> Result<Var<'t>> {
        self.map_unary(Op::FloorModulus { src: self.id, eps }, |v| {
            let mut re = v.re_plane().to_vec();
            let mut im = v.im_plane().map(|p| p.to_vec()).unwrap_or_else(|| vec![0.0; re.len()]);
            for i in 0..re.len() {
                let m = re[i].hypot(im[i]);
                if m < eps {
                    if m == 0.0 {
                        re[i] = eps;
                        im[i] = 0.0;
                    } else {
                        re[i] *= eps / m;
                        im[i] *= eps / m;
                    }
                }
            }
            Ok(if v.is_complex() {
                complex_value(v.shape(), re, im)
            } else {
                real_value(v.shape(), re)
            })
        })
    }

    /// Euclidean norm over all (complex) entries.
    pub fn l2_norm(self) -> Result<Var<'t>> {
        self.abs_sq()?.sum()?.sqrt()
    }
}
