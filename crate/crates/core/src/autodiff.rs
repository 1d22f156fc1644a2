//! Reverse-mode automatic differentiation over a per-sample tape.
//!
//! Ops are coarse (convolution, affine maps, spatial reductions) so a tape
//! for one image or one sketch sequence stays small. Parameters are read
//! from a borrowed [`ParamStore`]; whether a parameter receives gradient is
//! decided when the tape is created, which is how training steps restrict
//! updates to a subset of a model.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Which parameters of the store are differentiated.
#[derive(Clone, Copy, Debug)]
pub enum Trainable<'a> {
    None,
    All,
    Mask(&'a [bool]),
}

impl Trainable<'_> {
    fn contains(&self, id: ParamId) -> bool {
        match self {
            Trainable::None => false,
            Trainable::All => true,
            Trainable::Mask(m) => m[id.0],
        }
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Linear {
        w: Var,
        x: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddChannelVec {
        x: Var,
        v: Var,
    },
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SpatialMean(Var),
    WeightedSpatialSum {
        x: Var,
        alpha: Var,
    },
    SpatialGate {
        x: Var,
        a: Var,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    /// Scalar output with precomputed partial derivatives for each input.
    ScalarFn {
        inputs: Vec<Var>,
        partials: Vec<Vec<f64>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    trainable: Trainable<'a>,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = conv_out(h, k, stride, pad);
    let wo = conv_out(w, k, stride, pad);
    let n = ho * wo;
    let mut col = vec![0.0; c * k * k * n];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * n;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = ci * h * w + iy as usize * w;
                    let dst = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            col[dst + ox] = x[src + ix as usize];
                        }
                    }
                }
            }
        }
    }
    (col, ho, wo)
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f64],
    dx: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) {
    let ho = conv_out(h, k, stride, pad);
    let wo = conv_out(w, k, stride, pad);
    let n = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * n;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = ci * h * w + iy as usize * w;
                    let src = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[dst + ix as usize] += col[src + ox];
                        }
                    }
                }
            }
        }
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(delta) {
                *a += b;
            }
        }
        None => *slot = Some(delta.to_vec()),
    }
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore, trainable: Trainable<'a>) -> Self {
        Self {
            store,
            trainable,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    /// A tape that differentiates nothing (inference).
    pub fn inference(store: &'a ParamStore) -> Self {
        Self::new(store, Trainable::None)
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.data(v)[0]
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let rg = self.trainable.contains(id);
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: rg,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// 2-D convolution of `x: [C,H,W]` with `w: [O,C,k,k]` and optional bias `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(xs.len(), 3, "conv2d input must be [C,H,W]");
        assert_eq!(ws.len(), 4, "conv2d weight must be [O,C,k,k]");
        let (c, h, wd) = (xs[0], xs[1], xs[2]);
        let (o, wc, k) = (ws[0], ws[1], ws[2]);
        assert_eq!(c, wc, "conv2d channel mismatch");
        let (col, ho, wo) = im2col(self.data(x), c, h, wd, k, stride, pad);
        let n = ho * wo;
        let mut out = vec![0.0; o * n];
        if let Some(b) = b {
            let bd = self.data(b);
            for (oi, row) in out.chunks_mut(n).enumerate() {
                row.fill(bd[oi]);
            }
        }
        math::gemm(
            o,
            c * k * k,
            n,
            self.data(w),
            false,
            &col,
            false,
            1.0,
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(
            Tensor::new(vec![o, ho, wo], out).unwrap(),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        )
    }

    /// `w: [O,I]`, `x: [I]`, optional `b: [O]`.
    pub fn linear(&mut self, w: Var, x: Var, b: Option<Var>) -> Var {
        let ws = self.shape(w);
        let (o, i) = (ws[0], ws[1]);
        assert_eq!(self.value(x).len(), i, "linear input size");
        let mut out = match b {
            Some(b) => self.data(b).to_vec(),
            None => vec![0.0; o],
        };
        math::gemm(
            o,
            i,
            1,
            self.data(w),
            false,
            self.data(x),
            false,
            1.0,
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::from_vec(out), Op::Linear { w, x, b }, rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "elementwise size mismatch");
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data).unwrap();
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).unwrap();
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, math::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, math::exp, Op::Exp(a))
    }

    /// Softmax over every element of `a`, keeping its shape.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut data = ta.data().to_vec();
        math::softmax_in_place(&mut data);
        let t = Tensor::new(ta.shape().to_vec(), data).unwrap();
        let rg = self.rg(a);
        self.push(t, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut data = ta.data().to_vec();
        math::log_softmax_in_place(&mut data);
        let t = Tensor::new(ta.shape().to_vec(), data).unwrap();
        let rg = self.rg(a);
        self.push(t, Op::LogSoftmax(a), rg)
    }

    /// `x: [C,H,W] + v: [C]` broadcast over the spatial grid.
    pub fn add_channel_vec(&mut self, x: Var, v: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let c = xs[0];
        let hw = self.value(x).len() / c;
        assert_eq!(self.value(v).len(), c);
        let vd = self.data(v).to_vec();
        let mut out = self.data(x).to_vec();
        for (ci, row) in out.chunks_mut(hw).enumerate() {
            for e in row {
                *e += vd[ci];
            }
        }
        let rg = self.rg(x) || self.rg(v);
        self.push(
            Tensor::new(xs, out).unwrap(),
            Op::AddChannelVec { x, v },
            rg,
        )
    }

    /// Global average pooling `[C,H,W] -> [C]`.
    pub fn spatial_mean(&mut self, x: Var) -> Var {
        let c = self.shape(x)[0];
        let hw = self.value(x).len() / c;
        let out: Vec<f64> = self
            .data(x)
            .chunks(hw)
            .map(|r| r.iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::from_vec(out), Op::SpatialMean(x), rg)
    }

    /// `sum_p alpha[p] * x[:, p]` for `x: [C,H,W]`, `alpha` with `H*W` elements.
    pub fn weighted_spatial_sum(&mut self, x: Var, alpha: Var) -> Var {
        let c = self.shape(x)[0];
        let hw = self.value(x).len() / c;
        assert_eq!(self.value(alpha).len(), hw);
        let ad = self.data(alpha);
        let out: Vec<f64> = self.data(x).chunks(hw).map(|r| math::dot(r, ad)).collect();
        let rg = self.rg(x) || self.rg(alpha);
        self.push(
            Tensor::from_vec(out),
            Op::WeightedSpatialSum { x, alpha },
            rg,
        )
    }

    /// `x[:, p] * a[p]` for `x: [C,H,W]`, `a` with `H*W` elements.
    pub fn spatial_gate(&mut self, x: Var, a: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let hw = self.value(x).len() / xs[0];
        assert_eq!(self.value(a).len(), hw);
        let ad = self.data(a).to_vec();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(hw) {
            for (e, g) in row.iter_mut().zip(&ad) {
                *e *= g;
            }
        }
        let rg = self.rg(x) || self.rg(a);
        self.push(Tensor::new(xs, out).unwrap(), Op::SpatialGate { x, a }, rg)
    }

    /// Flat concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::from_vec(out), Op::Concat(parts.to_vec()), rg)
    }

    /// Flat slice `[start, start+len)`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.data(x)[start..start + len].to_vec();
        let rg = self.rg(x);
        self.push(Tensor::from_vec(out), Op::Slice { x, start }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape).expect("reshape size");
        let rg = self.rg(x);
        self.push(t, Op::Reshape(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Scalar node computed outside the tape, with its partial derivatives
    /// with respect to each input supplied by the caller.
    pub fn scalar_fn(&mut self, inputs: &[Var], value: f64, partials: Vec<Vec<f64>>) -> Var {
        assert_eq!(inputs.len(), partials.len());
        for (&v, p) in inputs.iter().zip(&partials) {
            assert_eq!(self.value(v).len(), p.len(), "partials size");
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            Tensor::scalar(value),
            Op::ScalarFn {
                inputs: inputs.to_vec(),
                partials,
            },
            rg,
        )
    }

    /// Backpropagate from a scalar root with unit seed.
    pub fn backward(&self, root: Var, grads: &mut Grads) {
        self.backward_seeded(&[(root, &[1.0])], grads);
    }

    /// Backpropagate from several roots, each with an explicit output
    /// gradient, accumulating parameter gradients into `grads`.
    pub fn backward_seeded(&self, seeds: &[(Var, &[f64])], grads: &mut Grads) {
        let Some(last) = seeds.iter().map(|(v, _)| v.0).max() else {
            return;
        };
        let mut g: Vec<Option<Vec<f64>>> = vec![None; last + 1];
        for (v, s) in seeds {
            assert_eq!(self.value(*v).len(), s.len(), "seed size");
            if self.rg(*v) {
                add_into(&mut g[v.0], s);
            }
        }
        for idx in (0..=last).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &node.op, &dy, &mut g, grads);
        }
    }

    fn propagate(
        &self,
        idx: usize,
        op: &Op,
        dy: &[f64],
        g: &mut [Option<Vec<f64>>],
        grads: &mut Grads,
    ) {
        let out = self.nodes[idx].value.as_ref();
        match op {
            Op::Constant => {}
            Op::Param(id) => grads.accumulate(*id, dy),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let (c, h, wd) = (xs[0], xs[1], xs[2]);
                let (o, k) = (ws[0], ws[2]);
                let (col, ho, wo) = im2col(self.data(*x), c, h, wd, k, *stride, *pad);
                let n = ho * wo;
                let kk = c * k * k;
                if self.rg(*w) {
                    let mut dw = vec![0.0; o * kk];
                    math::gemm(o, n, kk, dy, false, &col, true, 0.0, &mut dw);
                    add_into(&mut g[w.0], &dw);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let db: Vec<f64> = dy.chunks(n).map(|r| r.iter().sum()).collect();
                        add_into(&mut g[b.0], &db);
                    }
                }
                if self.rg(*x) {
                    let mut dcol = vec![0.0; kk * n];
                    math::gemm(kk, o, n, self.data(*w), true, dy, false, 0.0, &mut dcol);
                    let mut dx = vec![0.0; c * h * wd];
                    col2im(&dcol, &mut dx, c, h, wd, k, *stride, *pad);
                    add_into(&mut g[x.0], &dx);
                }
            }
            Op::Linear { w, x, b } => {
                let ws = self.shape(*w);
                let (o, i) = (ws[0], ws[1]);
                if self.rg(*w) {
                    let xd = self.data(*x);
                    let mut dw = vec![0.0; o * i];
                    for (row, &d) in dw.chunks_mut(i).zip(dy) {
                        if d != 0.0 {
                            for (e, &xv) in row.iter_mut().zip(xd) {
                                *e = d * xv;
                            }
                        }
                    }
                    add_into(&mut g[w.0], &dw);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        add_into(&mut g[b.0], dy);
                    }
                }
                if self.rg(*x) {
                    let mut dx = vec![0.0; i];
                    math::gemm(i, o, 1, self.data(*w), true, dy, false, 0.0, &mut dx);
                    add_into(&mut g[x.0], &dx);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    add_into(&mut g[a.0], dy);
                }
                if self.rg(*b) {
                    add_into(&mut g[b.0], dy);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    add_into(&mut g[a.0], dy);
                }
                if self.rg(*b) {
                    let neg: Vec<f64> = dy.iter().map(|x| -x).collect();
                    add_into(&mut g[b.0], &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d: Vec<f64> = dy.iter().zip(self.data(*b)).map(|(d, y)| d * y).collect();
                    add_into(&mut g[a.0], &d);
                }
                if self.rg(*b) {
                    let d: Vec<f64> = dy.iter().zip(self.data(*a)).map(|(d, x)| d * x).collect();
                    add_into(&mut g[b.0], &d);
                }
            }
            Op::AddChannelVec { x, v } => {
                if self.rg(*x) {
                    add_into(&mut g[x.0], dy);
                }
                if self.rg(*v) {
                    let c = self.value(*v).len();
                    let hw = dy.len() / c;
                    let dv: Vec<f64> = dy.chunks(hw).map(|r| r.iter().sum()).collect();
                    add_into(&mut g[v.0], &dv);
                }
            }
            Op::Scale(a, s) => {
                let d: Vec<f64> = dy.iter().map(|x| x * s).collect();
                add_into(&mut g[a.0], &d);
            }
            Op::Tanh(a) => {
                let y = out.unwrap().data();
                let d: Vec<f64> = dy.iter().zip(y).map(|(d, t)| d * (1.0 - t * t)).collect();
                add_into(&mut g[a.0], &d);
            }
            Op::Sigmoid(a) => {
                let y = out.unwrap().data();
                let d: Vec<f64> = dy.iter().zip(y).map(|(d, s)| d * s * (1.0 - s)).collect();
                add_into(&mut g[a.0], &d);
            }
            Op::Relu(a) => {
                let y = out.unwrap().data();
                let d: Vec<f64> = dy
                    .iter()
                    .zip(y)
                    .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                    .collect();
                add_into(&mut g[a.0], &d);
            }
            Op::LeakyRelu(a, slope) => {
                let y = out.unwrap().data();
                let d: Vec<f64> = dy
                    .iter()
                    .zip(y)
                    .map(|(d, v)| if *v > 0.0 { *d } else { slope * d })
                    .collect();
                add_into(&mut g[a.0], &d);
            }
            Op::Exp(a) => {
                let y = out.unwrap().data();
                let d: Vec<f64> = dy.iter().zip(y).map(|(d, e)| d * e).collect();
                add_into(&mut g[a.0], &d);
            }
            Op::Softmax(a) => {
                let s = out.unwrap().data();
                let inner = math::dot(dy, s);
                let d: Vec<f64> = dy.iter().zip(s).map(|(d, p)| p * (d - inner)).collect();
                add_into(&mut g[a.0], &d);
            }
            Op::LogSoftmax(a) => {
                let y = out.unwrap().data();
                let total: f64 = dy.iter().sum();
                let d: Vec<f64> = dy
                    .iter()
                    .zip(y)
                    .map(|(d, l)| d - math::exp(*l) * total)
                    .collect();
                add_into(&mut g[a.0], &d);
            }
            Op::SpatialMean(x) => {
                let n = self.value(*x).len();
                let hw = n / dy.len();
                let mut d = vec![0.0; n];
                for (row, &dv) in d.chunks_mut(hw).zip(dy) {
                    row.fill(dv / hw as f64);
                }
                add_into(&mut g[x.0], &d);
            }
            Op::WeightedSpatialSum { x, alpha } => {
                let hw = self.value(*alpha).len();
                if self.rg(*x) {
                    let ad = self.data(*alpha);
                    let mut d = vec![0.0; self.value(*x).len()];
                    for (row, &dv) in d.chunks_mut(hw).zip(dy) {
                        for (e, a) in row.iter_mut().zip(ad) {
                            *e = dv * a;
                        }
                    }
                    add_into(&mut g[x.0], &d);
                }
                if self.rg(*alpha) {
                    let mut d = vec![0.0; hw];
                    for (row, &dv) in self.data(*x).chunks(hw).zip(dy) {
                        for (e, xv) in d.iter_mut().zip(row) {
                            *e += dv * xv;
                        }
                    }
                    add_into(&mut g[alpha.0], &d);
                }
            }
            Op::SpatialGate { x, a } => {
                let hw = self.value(*a).len();
                if self.rg(*x) {
                    let ad = self.data(*a);
                    let mut d = dy.to_vec();
                    for row in d.chunks_mut(hw) {
                        for (e, av) in row.iter_mut().zip(ad) {
                            *e *= av;
                        }
                    }
                    add_into(&mut g[x.0], &d);
                }
                if self.rg(*a) {
                    let mut d = vec![0.0; hw];
                    for (drow, xrow) in dy.chunks(hw).zip(self.data(*x).chunks(hw)) {
                        for ((e, dv), xv) in d.iter_mut().zip(drow).zip(xrow) {
                            *e += dv * xv;
                        }
                    }
                    add_into(&mut g[a.0], &d);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if self.rg(*p) {
                        add_into(&mut g[p.0], &dy[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let mut d = vec![0.0; self.value(*x).len()];
                d[*start..*start + dy.len()].copy_from_slice(dy);
                add_into(&mut g[x.0], &d);
            }
            Op::Reshape(x) => add_into(&mut g[x.0], dy),
            Op::Sum(x) => {
                let d = vec![dy[0]; self.value(*x).len()];
                add_into(&mut g[x.0], &d);
            }
            Op::ScalarFn { inputs, partials } => {
                for (v, p) in inputs.iter().zip(partials) {
                    if self.rg(*v) {
                        let d: Vec<f64> = p.iter().map(|x| x * dy[0]).collect();
                        add_into(&mut g[v.0], &d);
                    }
                }
            }
        }
    }
}
