//! Tape-based reverse-mode differentiation over rank-4 NCHW tensors.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! every node, from which parameter gradients are read by [`ParamId`].

pub(crate) mod kernels;

use std::collections::HashMap;

use ndarray::{Array4, ArrayView4, Axis};

use crate::error::{shape_err, Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::Scalar;

use kernels::ConvGeom;

/// Rank-4 (batch, channel, height, width) array.
pub type Tensor<T> = Array4<T>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param,
    Conv { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>),
    GlobalAvgPool(Var),
    GlobalMaxPool { x: Var, argmax: Vec<usize> },
    ChannelMean(Var),
    ChannelMax { x: Var, argmax: Vec<usize> },
    Resize(Var),
    Bce { pred: Var, target: Tensor<T>, eps: T },
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn standard<T: Clone>(t: Tensor<T>) -> Tensor<T> {
    if t.is_standard_layout() {
        t
    } else {
        t.as_standard_layout().into_owned()
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<[usize; 4]> {
    let mut out = [0; 4];
    for i in 0..4 {
        out[i] = match (a[i], b[i]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Sums `t` down to `shape` along the axes that were broadcast.
fn reduce_to<T: Scalar>(t: Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let mut t = t;
    for axis in 0..4 {
        if shape[axis] == 1 && t.shape()[axis] != 1 {
            t = t.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    standard(t)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value: standard(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        let s = self.nodes[v.0].value.shape();
        [s[0], s[1], s[2], s[3]]
    }

    /// Scalar value of a 1×1×1×1 node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[[0, 0, 0, 0]]
    }

    /// Non-differentiable input.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf whose gradient is always propagated, including through the
    /// input side of a convolution (plain inputs skip that work).
    pub fn watch(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Param)
    }

    /// Leaf bound to a stored parameter. Repeated requests for the same
    /// parameter return the same node so gradients accumulate once.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs[1] != ws[1] || ws[2] != ws[3] {
            return Err(shape_err("conv2d input/weight channels", &xs, &ws));
        }
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != [1, ws[0], 1, 1] {
                return Err(shape_err("conv2d bias", &bs, &[1, ws[0], 1, 1]));
            }
        }
        let k = ws[2];
        if xs[2] + 2 * pad < k || xs[3] + 2 * pad < k {
            return Err(shape_err("conv2d kernel larger than padded input", &xs, &ws));
        }
        let g = ConvGeom {
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            k,
            stride,
            pad,
            ho: kernels::conv_out_len(xs[2], k, stride, pad),
            wo: kernels::conv_out_len(xs[3], k, stride, pad),
        };
        let mut out = Tensor::zeros((xs[0], ws[0], g.ho, g.wo));
        kernels::conv2d_forward(
            self.value(x).as_slice().unwrap(),
            xs[0],
            self.value(w).as_slice().unwrap(),
            ws[0],
            b.map(|b| self.value(b).as_slice().unwrap()),
            &g,
            out.as_slice_mut().unwrap(),
        );
        Ok(self.push(out, Op::Conv { x, w, b, stride, pad }))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, [usize; 4])> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let out = broadcast_shape(&sa, &sb).ok_or_else(|| shape_err(name, &sa, &sb))?;
        let va = self.value(a).broadcast(out).unwrap();
        let vb = self.value(b).broadcast(out).unwrap();
        let mut res = Tensor::zeros(out);
        ndarray::Zip::from(&mut res).and(&va).and(&vb).for_each(|r, &x, &y| *r = f(x, y));
        Ok((res, out))
    }

    /// Elementwise sum with size-1 broadcasting on any axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, _) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Elementwise product with size-1 broadcasting on any axis.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, _) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let v = self.value(x).mapv(|e| scale * e + shift);
        self.push(v, Op::Affine { x, scale })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(kernels::sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|e| if e > T::zero() { e } else { T::zero() });
        self.push(v, Op::Relu(x))
    }

    /// Channel-axis concatenation.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(xs[0]);
        for &x in &xs[1..] {
            let s = self.shape(x);
            if s[0] != first[0] || s[2] != first[2] || s[3] != first[3] {
                return Err(shape_err("concat", &first, &s));
            }
        }
        let views: Vec<ArrayView4<T>> = xs.iter().map(|&x| self.value(x).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.push(v, Op::Concat(xs.to_vec())))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let [b, c, h, w] = self.shape(x);
        let n = T::from_usize_lossy(h * w);
        let src = self.value(x).as_slice().unwrap();
        let mut out = Tensor::zeros((b, c, 1, 1));
        for (o, plane) in out.iter_mut().zip(src.chunks(h * w)) {
            *o = plane.iter().copied().sum::<T>() / n;
        }
        self.push(out, Op::GlobalAvgPool(x))
    }

    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let [b, c, h, w] = self.shape(x);
        let src = self.value(x).as_slice().unwrap();
        let mut out = Tensor::zeros((b, c, 1, 1));
        let mut argmax = Vec::with_capacity(b * c);
        for (p, (o, plane)) in out.iter_mut().zip(src.chunks(h * w)).enumerate() {
            let (i, m) = argmax_of(plane);
            *o = m;
            argmax.push(p * h * w + i);
        }
        self.push(out, Op::GlobalMaxPool { x, argmax })
    }

    /// Mean over channels, B×1×H×W.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let c = self.shape(x)[1];
        let v = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1)) / T::from_usize_lossy(c);
        self.push(v, Op::ChannelMean(x))
    }

    /// Max over channels, B×1×H×W.
    pub fn channel_max(&mut self, x: Var) -> Var {
        let [b, c, h, w] = self.shape(x);
        let hw = h * w;
        let src = self.value(x).as_slice().unwrap();
        let mut out = Tensor::zeros((b, 1, h, w));
        let mut argmax = Vec::with_capacity(b * hw);
        {
            let o = out.as_slice_mut().unwrap();
            for bi in 0..b {
                for p in 0..hw {
                    let mut best = bi * c * hw + p;
                    for ci in 1..c {
                        let idx = (bi * c + ci) * hw + p;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    o[bi * hw + p] = src[best];
                    argmax.push(best);
                }
            }
        }
        self.push(out, Op::ChannelMax { x, argmax })
    }

    /// Bilinear (half-pixel centres) resampling to `(h, w)`.
    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Var {
        let [b, c, hi, wi] = self.shape(x);
        if (hi, wi) == (h, w) {
            let v = self.value(x).clone();
            return self.push(v, Op::Resize(x));
        }
        let mut out = Tensor::zeros((b, c, h, w));
        kernels::resize_planes(self.value(x).as_slice().unwrap(), b * c, (hi, wi), (h, w), out.as_slice_mut().unwrap());
        self.push(out, Op::Resize(x))
    }

    /// Pixel-mean binary cross-entropy of `pred` (probabilities) against a
    /// constant target; predictions are clamped to `[eps, 1 − eps]`.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>, eps: T) -> Result<Var> {
        let ps = self.shape(pred);
        if ps[..] != target.shape()[..] {
            return Err(shape_err("bce pred/target", &ps, target.shape()));
        }
        let total = crate::losses::bce_slice(
            self.value(pred).as_slice().unwrap(),
            standard(target.clone()).as_slice().unwrap(),
            eps,
        );
        let v = Tensor::from_elem((1, 1, 1, 1), total);
        Ok(self.push(v, Op::Bce { pred, target: standard(target.clone()), eps }))
    }

    /// `Σ wᵢ·xᵢ` over equally shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let shape = self.shape(terms[0].0);
        let mut acc = Tensor::zeros(shape);
        for &(v, w) in terms {
            let s = self.shape(v);
            if s != shape {
                return Err(shape_err("weighted_sum", &s, &shape));
            }
            acc.scaled_add(w, self.value(v));
        }
        Ok(self.push(acc, Op::WeightedSum(terms.to_vec())))
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.nodes[loss.0].value.raw_dim()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads, graph_params: self.params.clone() }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv { x, w, b, stride, pad } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let gm = ConvGeom {
                    cin: xs[1],
                    h: xs[2],
                    w: xs[3],
                    k: ws[2],
                    stride: *stride,
                    pad: *pad,
                    ho: node.value.shape()[2],
                    wo: node.value.shape()[3],
                };
                let mut dx = Tensor::zeros(xs);
                let mut dw = Tensor::zeros(ws);
                let mut db = Tensor::zeros((1, ws[0], 1, 1));
                kernels::conv2d_backward(
                    self.value(*x).as_slice().unwrap(),
                    xs[0],
                    self.value(*w).as_slice().unwrap(),
                    ws[0],
                    &gm,
                    g.as_slice().unwrap(),
                    self.needs_grad(*x).then(|| dx.as_slice_mut().unwrap()),
                    Some(dw.as_slice_mut().unwrap()),
                    b.map(|_| db.as_slice_mut().unwrap()),
                );
                if self.needs_grad(*x) {
                    accumulate(grads, *x, dx);
                }
                accumulate(grads, *w, dw);
                if let Some(b) = b {
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                accumulate(grads, *a, reduce_to(g.clone(), &sa));
                accumulate(grads, *b, reduce_to(g.clone(), &sb));
            }
            Op::Mul(a, b) => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let va = self.value(*a);
                let vb = self.value(*b);
                let ga = g * &vb.broadcast(g.raw_dim()).unwrap();
                let gb = g * &va.broadcast(g.raw_dim()).unwrap();
                accumulate(grads, *a, reduce_to(ga, &sa));
                accumulate(grads, *b, reduce_to(gb, &sb));
            }
            Op::Affine { x, scale } => {
                accumulate(grads, *x, g.mapv(|e| e * *scale));
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(&node.value).for_each(|d, &s| *d = *d * s * (T::one() - s));
                accumulate(grads, *x, d);
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                    if y <= T::zero() {
                        *d = T::zero()
                    }
                });
                accumulate(grads, *x, d);
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let c = self.shape(x)[1];
                    let part = g.slice_axis(Axis(1), (offset..offset + c).into()).to_owned();
                    accumulate(grads, x, standard(part));
                    offset += c;
                }
            }
            Op::GlobalAvgPool(x) => {
                let [b, c, h, w] = self.shape(*x);
                let n = T::from_usize_lossy(h * w);
                let mut d = Tensor::zeros((b, c, h, w));
                for (plane, &gv) in d.as_slice_mut().unwrap().chunks_mut(h * w).zip(g.iter()) {
                    plane.iter_mut().for_each(|v| *v = gv / n);
                }
                accumulate(grads, *x, d);
            }
            Op::GlobalMaxPool { x, argmax } | Op::ChannelMax { x, argmax } => {
                let mut d = Tensor::zeros(self.shape(*x));
                let ds = d.as_slice_mut().unwrap();
                for (&idx, &gv) in argmax.iter().zip(g.iter()) {
                    ds[idx] += gv;
                }
                accumulate(grads, *x, d);
            }
            Op::ChannelMean(x) => {
                let s = self.shape(*x);
                let n = T::from_usize_lossy(s[1]);
                let d = g.broadcast(s).unwrap().mapv(|e| e / n);
                accumulate(grads, *x, d);
            }
            Op::Resize(x) => {
                let [b, c, hi, wi] = self.shape(*x);
                let [_, _, ho, wo] = [g.shape()[0], g.shape()[1], g.shape()[2], g.shape()[3]];
                if (hi, wi) == (ho, wo) {
                    accumulate(grads, *x, g.clone());
                } else {
                    let mut d = Tensor::zeros((b, c, hi, wi));
                    kernels::resize_planes_backward(
                        g.as_slice().unwrap(),
                        b * c,
                        (hi, wi),
                        (ho, wo),
                        d.as_slice_mut().unwrap(),
                    );
                    accumulate(grads, *x, d);
                }
            }
            Op::Bce { pred, target, eps } => {
                let gv = g[[0, 0, 0, 0]];
                let p = self.value(*pred);
                let mut d = Tensor::zeros(p.raw_dim());
                crate::losses::bce_grad_slice(
                    p.as_slice().unwrap(),
                    target.as_slice().unwrap(),
                    *eps,
                    d.as_slice_mut().unwrap(),
                );
                d.mapv_inplace(|e| e * gv);
                accumulate(grads, *pred, d);
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    accumulate(grads, v, g.mapv(|e| e * w));
                }
            }
        }
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf)
    }
}

fn argmax_of<T: Scalar>(xs: &[T]) -> (usize, T) {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    (best, xs[best])
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, d: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &d,
        slot @ None => *slot = Some(d),
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    graph_params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a parameter; `None` if it did not take part in the pass.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.graph_params.get(&id).and_then(|v| self.of(*v))
    }
}
